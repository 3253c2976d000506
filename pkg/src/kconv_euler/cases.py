"""Initial data, exact rarefaction solutions and injected test sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eos import GasLaw
from .mesh import Mesh, build_mesh, project
from .solver import InitialData

CASE_IDS = ("smooth_periodic", "riemann", "two_state_synthetic", "constant")


class CaseError(ValueError):
    pass


def _as_vec(v, d):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 1 and d > 1:
        v = np.repeat(v, d)
    if v.size != d:
        raise CaseError(f"expected {d} components, got {v.size}")
    return v


def smooth_periodic(
    dim: int = 1,
    rho_bar: float = 1.0,
    amp_rho: float = 0.2,
    kappa=1,
    amp_u=0.2,
    kappa_u=1,
    allow_vacuum: bool = False,
) -> InitialData:
    """``rho0 = rho_bar + A sin(pi kappa.x)``, ``u0_i = B_i sin(pi kappa_u.x)``.

    Integer wave vectors keep the data 2-periodic in every direction.
    """
    margin = rho_bar - abs(amp_rho)
    if margin < 0.0 or (margin == 0.0 and not allow_vacuum):
        raise CaseError(f"rho_bar - |A| = {margin} must be positive")
    k_rho = _as_vec(kappa, dim)
    k_u = _as_vec(kappa_u, dim)
    b = _as_vec(amp_u, dim)

    def rho0(x):
        return rho_bar + amp_rho * np.sin(np.pi * (x @ k_rho))

    def u0(x):
        return np.sin(np.pi * (x @ k_u))[..., None] * b

    return InitialData(rho0, u0, name="smooth_periodic")


def constant(dim: int = 1, rho: float = 1.0, u=0.0) -> InitialData:
    uvec = _as_vec(u, dim)
    return InitialData(
        lambda x: np.full(x.shape[:-1], float(rho)),
        lambda x: np.broadcast_to(uvec, x.shape[:-1] + (dim,)).copy(),
        name="constant",
    )


@dataclass(frozen=True)
class RiemannState:
    rho: float
    u: float


@dataclass(frozen=True)
class RiemannCase:
    """Riemann data at x = 0 on the 1D torus; the wrap-around at x = +-1 carries
    the mirrored pair (right | left)."""

    left: RiemannState
    right: RiemannState
    gas: GasLaw
    window: float
    t_valid: float
    data: InitialData = field(repr=False)

    def exact(self, x, t):
        return exact_rarefaction(x, t, self.left, self.right, self.gas)

    def exact_cell_averages(self, mesh: Mesh, t: float):
        """Cell averages of (rho, m) from the exact fan on a 1D mesh."""

        def f(points):
            rho, u = self.exact(points[..., 0], t)
            return np.stack([rho, rho * u], axis=-1)

        return project(f, mesh)

    def window_mask(self, mesh: Mesh) -> np.ndarray:
        return np.abs(mesh.centers[:, 0]) < self.window


def _rarefaction_star(left: RiemannState, right: RiemannState, gas: GasLaw):
    g1 = gas.gamma - 1.0
    c_l = float(gas.sound_speed(left.rho))
    c_r = float(gas.sound_speed(right.rho))
    c_star = 0.25 * g1 * (left.u - right.u) + 0.5 * (c_l + c_r)
    return c_l, c_r, c_star


def check_rarefaction_pair(left: RiemannState, right: RiemannState, gas: GasLaw, tol: float = 1e-12):
    """Return (c_l, c_r, c_star, u_star) if the pair is joined by rarefactions only."""
    if left.rho <= 0.0 or right.rho <= 0.0:
        raise CaseError("Riemann states must have positive density")
    c_l, c_r, c_star = _rarefaction_star(left, right, gas)
    if c_star <= 0.0:
        raise CaseError(f"states open a vacuum (star sound speed {c_star:.3e} <= 0)")
    if c_star > c_l * (1 + tol) + tol or c_star > c_r * (1 + tol) + tol:
        raise CaseError("states are not joined by rarefactions alone (a shock would form)")
    u_star = left.u + 2.0 / (gas.gamma - 1.0) * (c_l - c_star)
    return c_l, c_r, min(c_star, c_l, c_r), u_star


def exact_rarefaction(x, t: float, left: RiemannState, right: RiemannState, gas: GasLaw):
    """Self-similar solution (rho, u) of the Riemann problem at x = 0, no shocks.

    Across the 1-fan u + 2c/(gamma-1) is constant and x/t = u - c; across
    the 2-fan u - 2c/(gamma-1) is constant and x/t = u + c.
    """
    x = np.asarray(x, dtype=float)
    c_l, c_r, c_star, u_star = check_rarefaction_pair(left, right, gas)
    rho = np.where(x < 0.0, left.rho, right.rho).astype(float)
    u = np.where(x < 0.0, left.u, right.u).astype(float)
    if t <= 0.0:
        return rho, u
    g1 = gas.gamma - 1.0
    mu = g1 / (gas.gamma + 1.0)
    xi = x / t
    head1, tail1 = left.u - c_l, u_star - c_star
    tail2, head2 = u_star + c_star, right.u + c_r
    rho_star = float(gas.density_from_sound_speed(c_star))

    c = np.where(xi < head1, c_l, np.nan)
    u = np.where(xi < head1, left.u, np.nan)
    fan1 = (xi >= head1) & (xi < tail1)
    j_plus = left.u + 2.0 * c_l / g1
    c = np.where(fan1, mu * (j_plus - xi), c)
    u = np.where(fan1, mu * (j_plus - xi) + xi, u)
    star = (xi >= tail1) & (xi <= tail2)
    c = np.where(star, c_star, c)
    u = np.where(star, u_star, u)
    fan2 = (xi > tail2) & (xi <= head2)
    j_minus = right.u - 2.0 * c_r / g1
    c = np.where(fan2, mu * (xi - j_minus), c)
    u = np.where(fan2, xi - mu * (xi - j_minus), u)
    c = np.where(xi > head2, c_r, c)
    u = np.where(xi > head2, right.u, u)
    rho = np.asarray(gas.density_from_sound_speed(c), dtype=float)
    rho = np.where(star, rho_star, rho)
    rho = np.where(xi < head1, left.rho, rho)
    rho = np.where(xi > head2, right.rho, rho)
    return rho, u


def _wave_speeds_secondary(left: RiemannState, right: RiemannState, gas: GasLaw) -> float:
    """Bound on wave speeds of the wrap-around problem (right | left), shocks allowed.

    Solves for the star velocity along the isentropic wave curves and
    returns the largest absolute wave speed.
    """
    a, g = gas.a, gas.gamma
    lo, hi = right, left  # states left and right of x = +-1

    def branch(rho_side, u_side, rho, sign):
        c_side = float(gas.sound_speed(rho_side))
        if rho <= rho_side:
            c = float(gas.sound_speed(rho))
            return u_side + sign * 2.0 / (g - 1.0) * (c_side - c)
        p_side, p = a * rho_side**g, a * rho**g
        return u_side - sign * math.sqrt((p - p_side) * (rho - rho_side) / (rho * rho_side))

    def mismatch(rho):
        return branch(lo.rho, lo.u, rho, +1.0) - branch(hi.rho, hi.u, rho, -1.0)

    r_lo, r_hi = 1e-12, max(lo.rho, hi.rho)
    while mismatch(r_hi) > 0.0:
        r_hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (r_lo + r_hi)
        if mismatch(mid) > 0.0:
            r_lo = mid
        else:
            r_hi = mid
    rho_s = 0.5 * (r_lo + r_hi)
    u_s = branch(lo.rho, lo.u, rho_s, +1.0)
    c_s = float(gas.sound_speed(rho_s))
    speeds = [abs(u_s) + c_s]
    for st, sign in ((lo, -1.0), (hi, +1.0)):
        c = float(gas.sound_speed(st.rho))
        speeds.append(abs(st.u) + c)
        if rho_s > st.rho:
            speeds.append(abs((rho_s * u_s - st.rho * st.u) / (rho_s - st.rho)))
    return max(speeds)


def riemann(left, right, gas: GasLaw, window: float = 0.5) -> RiemannCase:
    """Periodised Riemann data with jump at x = 0 and the mirrored jump at x = +-1.

    ``t_valid`` is the time up to which the fan stays inside ``|x| < window``
    and waves from the wrap-around jump have not entered it.
    """
    left = left if isinstance(left, RiemannState) else RiemannState(*left)
    right = right if isinstance(right, RiemannState) else RiemannState(*right)
    if not 0.0 < window < 1.0:
        raise CaseError("window half-width must lie in (0, 1)")
    if left == right:
        t_valid = math.inf
    else:
        c_l, c_r, c_star, u_star = check_rarefaction_pair(left, right, gas)
        fan = max(abs(left.u - c_l), abs(right.u + c_r), abs(u_star - c_star), abs(u_star + c_star))
        t_fan = window / fan if fan > 0 else math.inf
        t_wrap = (1.0 - window) / _wave_speeds_secondary(left, right, gas)
        t_valid = min(t_fan, t_wrap)

    def rho0(x):
        return np.where(x[..., 0] < 0.0, left.rho, right.rho)

    def u0(x):
        return np.where(x[..., 0] < 0.0, left.u, right.u)[..., None]

    return RiemannCase(left, right, gas, window, t_valid, InitialData(rho0, u0, name="riemann"))


def rarefaction_right_state(left: RiemannState, rho_right: float, gas: GasLaw) -> RiemannState:
    """Right state joined to ``left`` by a single 1-rarefaction (requires rho_right < rho_left)."""
    if not 0.0 < rho_right < left.rho:
        raise CaseError("a 1-rarefaction needs 0 < rho_right < rho_left")
    c_l = float(gas.sound_speed(left.rho))
    c_r = float(gas.sound_speed(rho_right))
    return RiemannState(rho_right, left.u + 2.0 / (gas.gamma - 1.0) * (c_l - c_r))


def two_state_synthetic(A, B, N: int) -> list[np.ndarray]:
    """Alternating phase-space states A, B, A, ... (length N), bypassing the solver."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise CaseError("states A and B must have the same shape")
    if N < 1:
        raise CaseError("need at least one member")
    return [A.copy() if k % 2 == 0 else B.copy() for k in range(N)]


def initial_energy(data: InitialData, gas: GasLaw, mesh: Mesh | None = None, dim: int = 1) -> float:
    """Total initial energy by 3-point Gauss quadrature on a fine grid."""
    if mesh is None:
        mesh = build_mesh(tuple([max(512 // 4 ** (dim - 1), 16)] * dim))

    def density(points):
        rho = np.asarray(data.rho0(points), dtype=float)
        u = np.asarray(data.u0(points), dtype=float)
        return gas.energy_density(rho, u)

    return math.fsum(mesh.volumes * project(density, mesh))


def build_case(case_id: str, dim: int, gas: GasLaw, **params):
    """Initial data for a named case; returns ``(data, riemann_case_or_None)``.

    ``two_state_synthetic`` has no initial data (it bypasses the solver).
    """
    if case_id in ("smooth_periodic", "constant"):
        builder = smooth_periodic if case_id == "smooth_periodic" else constant
        try:
            return builder(dim, **params), None
        except TypeError as exc:
            raise CaseError(f"bad parameters for case {case_id!r}: {exc}") from exc
    if case_id == "riemann":
        if dim != 1:
            raise CaseError("riemann case is one-dimensional")
        p = dict(params)
        left = RiemannState(float(p.pop("rho_left", 1.0)), float(p.pop("u_left", 0.0)))
        rho_r = float(p.pop("rho_right", 0.5))
        if "u_right" in p:
            right = RiemannState(rho_r, float(p.pop("u_right")))
        else:
            right = rarefaction_right_state(left, rho_r, gas)
        window = float(p.pop("window", 0.5))
        if p:
            raise CaseError(f"unknown riemann parameters: {sorted(p)}")
        rc = riemann(left, right, gas, window)
        return rc.data, rc
    if case_id == "two_state_synthetic":
        raise CaseError("two_state_synthetic bypasses the solver and has no initial data")
    raise CaseError(f"unknown case id {case_id!r}; expected one of {CASE_IDS}")
