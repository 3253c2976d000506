"""Fully implicit finite volume solver in primitive variables (rho, u).

Per cell K and step k the scheme reads

    D_t rho_K + sum_{faces} |s|/|K| F_h(rho, u)                      = 0
    D_t (rho u)_K + sum_{faces} |s|/|K| (F_h(rho u, u) + p_avg n - h^beta [[u]]) = 0

with every face term evaluated at the new level. The nonlinear system is
solved by damped Newton with an analytic sparse Jacobian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .eos import GasLaw, validate_parameters
from .mesh import Mesh, project

log = logging.getLogger(__name__)

ROUNDOFF_FACTOR = 64.0


class SolverError(RuntimeError):
    """Nonlinear solve failed even after time-step halving."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class State:
    rho: np.ndarray  # (N,)
    u: np.ndarray  # (N, d)

    @property
    def m(self) -> np.ndarray:
        return self.rho[:, None] * self.u

    def copy(self) -> "State":
        return State(self.rho.copy(), self.u.copy())

    def pack(self) -> np.ndarray:
        return np.concatenate([self.rho, self.u.T.ravel()])

    @staticmethod
    def unpack(x: np.ndarray, n_cells: int) -> "State":
        return State(x[:n_cells].copy(), x[n_cells:].reshape(-1, n_cells).T.copy())

    def phase(self) -> np.ndarray:
        """Phase-space values (rho, m) per cell, shape (N, d + 1)."""
        return np.column_stack([self.rho, self.m])


@dataclass(frozen=True)
class SchemeParams:
    alpha: float = 0.5
    beta: float = -0.8
    c_t: float = 0.5
    tol_nl: float = 1e-12
    max_nl_iter: int = 30
    max_dt_halvings: int = 4
    vacuum_shift: bool = False
    picard_fallback: bool = True

    def __post_init__(self):
        if not self.c_t > 0.0:
            raise ValueError("time-step ratio c_t must be positive")
        if not self.tol_nl > 0.0:
            raise ValueError("nonlinear tolerance must be positive")

    def validated(self, gas: GasLaw) -> "SchemeParams":
        validate_parameters(gas.gamma, self.alpha, self.beta)
        return self


@dataclass
class StepReport:
    iterations: int
    residual: float
    reference: float
    halvings: int
    min_rho: float
    dt: float
    mode: str = "newton"


def _face_data(mesh: Mesh, state: State):
    o, nb, ax = mesh.face_owner, mesh.face_neighbor, mesh.face_axis
    rows = np.arange(o.size)
    rho_k, rho_l = state.rho[o], state.rho[nb]
    u_k, u_l = state.u[o], state.u[nb]
    vn = 0.5 * (u_k[rows, ax] + u_l[rows, ax])
    coef = mesh.face_area / mesh.volumes[o]
    return o, nb, ax, rho_k, rho_l, u_k, u_l, vn, coef


def face_fluxes(mesh: Mesh, state: State, gas: GasLaw, params: SchemeParams):
    """Mass flux (F,) and momentum flux (F, d) across every face, owner -> neighbor."""
    h = mesh.h
    o, nb, ax, rho_k, rho_l, u_k, u_l, vn, _ = _face_data(mesh, state)
    diss = h**params.alpha + 0.5 * np.abs(vn)
    f_rho = 0.5 * (rho_k + rho_l) * vn - diss * (rho_l - rho_k)
    m_k = rho_k[:, None] * u_k
    m_l = rho_l[:, None] * u_l
    f_m = 0.5 * (m_k + m_l) * vn[:, None] - diss[:, None] * (m_l - m_k)
    p_avg = 0.5 * (gas.pressure(rho_k) + gas.pressure(rho_l))
    f_m[np.arange(ax.size), ax] += p_avg
    f_m -= h**params.beta * (u_l - u_k)
    return f_rho, f_m


def flux_divergence(mesh: Mesh, state: State, gas: GasLaw, params: SchemeParams) -> np.ndarray:
    """sum over faces of |s|/|K| times outward flux, shape (N, d + 1)."""
    f_rho, f_m = face_fluxes(mesh, state, gas, params)
    fluxes = np.column_stack([f_rho, f_m])
    coef_o = mesh.face_area / mesh.volumes[mesh.face_owner]
    coef_nb = mesh.face_area / mesh.volumes[mesh.face_neighbor]
    n = mesh.n_cells
    out = np.empty((n, fluxes.shape[1]))
    for c in range(fluxes.shape[1]):
        out[:, c] = np.bincount(mesh.face_owner, weights=coef_o * fluxes[:, c], minlength=n) - np.bincount(
            mesh.face_neighbor, weights=coef_nb * fluxes[:, c], minlength=n
        )
    return out


def residual(prev: State, cand: State, dt: float, mesh: Mesh, gas: GasLaw, params: SchemeParams) -> np.ndarray:
    """Per-cell residual, shape (N, d + 1): continuity then momentum components."""
    if np.any(cand.rho <= 0.0):
        raise ValueError("candidate density must be strictly positive")
    div = flux_divergence(mesh, cand, gas, params)
    res = np.empty_like(div)
    res[:, 0] = (cand.rho - prev.rho) / dt + div[:, 0]
    res[:, 1:] = (cand.m - prev.m) / dt + div[:, 1:]
    return res


def jacobian(cand: State, dt: float, mesh: Mesh, gas: GasLaw, params: SchemeParams, frozen_upwind=False):
    """Sparse Jacobian of the packed residual with respect to packed (rho, u).

    Unknowns and equations are ordered component-major: index ``c * N + K``
    with ``c = 0`` for density/continuity and ``c = 1 + i`` for u_i/momentum_i.
    With ``frozen_upwind`` the derivative of |v.n| is dropped (Picard-like).
    """
    n, d = mesh.n_cells, mesh.dim
    h = mesh.h
    o, nb, ax, rho_k, rho_l, u_k, u_l, vn, coef = _face_data(mesh, cand)
    coef_nb = mesh.face_area / mesh.volumes[nb]
    diss = h**params.alpha + 0.5 * np.abs(vn)
    s = np.zeros_like(vn) if frozen_upwind else np.sign(vn)
    hb = h**params.beta
    m_k = rho_k[:, None] * u_k
    m_l = rho_l[:, None] * u_l

    rows, cols, vals = [], [], []

    def add(eq_comp, var_cell, var_comp, dflux):
        # owner gets +coef * dF, neighbor -coef * dF
        col = var_comp * n + var_cell
        rows.append(eq_comp * n + o)
        cols.append(col)
        vals.append(coef * dflux)
        rows.append(eq_comp * n + nb)
        cols.append(col)
        vals.append(-coef_nb * dflux)

    def add_axis(eq_comp, var_cell, dflux):
        # derivative with respect to u_axis of the face, axis varies per face
        col = (1 + ax) * n + var_cell
        rows.append(eq_comp * n + o)
        cols.append(col)
        vals.append(coef * dflux)
        rows.append(eq_comp * n + nb)
        cols.append(col)
        vals.append(-coef_nb * dflux)

    drho_jump = rho_l - rho_k
    add(0, o, 0, 0.5 * vn + diss)
    add(0, nb, 0, 0.5 * vn - diss)
    d_vn = 0.5 * 0.5 * (rho_k + rho_l) - 0.25 * s * drho_jump
    add_axis(0, o, d_vn)
    add_axis(0, nb, d_vn)

    dp_k = 0.5 * gas.pressure_derivative(rho_k)
    dp_l = 0.5 * gas.pressure_derivative(rho_l)
    for i in range(d):
        on_axis = (ax == i).astype(float)
        add(1 + i, o, 0, u_k[:, i] * (0.5 * vn + diss) + dp_k * on_axis)
        add(1 + i, nb, 0, u_l[:, i] * (0.5 * vn - diss) + dp_l * on_axis)
        add(1 + i, o, 1 + i, rho_k * (0.5 * vn + diss) + hb)
        add(1 + i, nb, 1 + i, rho_l * (0.5 * vn - diss) - hb)
        d_vn_m = 0.5 * 0.5 * (m_k[:, i] + m_l[:, i]) - 0.25 * s * (m_l[:, i] - m_k[:, i])
        add_axis(1 + i, o, d_vn_m)
        add_axis(1 + i, nb, d_vn_m)

    cells = np.arange(n)
    rows.append(cells)
    cols.append(cells)
    vals.append(np.full(n, 1.0 / dt))
    for i in range(d):
        rows.append((1 + i) * n + cells)
        cols.append(cells)
        vals.append(cand.u[:, i] / dt)
        rows.append((1 + i) * n + cells)
        cols.append((1 + i) * n + cells)
        vals.append(cand.rho / dt)

    size = n * (d + 1)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsc()


def roundoff_scale(prev: State, cand: State, dt: float, mesh: Mesh, gas: GasLaw, params: SchemeParams) -> float:
    """Magnitude of the largest summand entering any residual entry."""
    f_rho, f_m = face_fluxes(mesh, cand, gas, params)
    coef = mesh.face_area / mesh.volumes[mesh.face_owner]
    mags = coef[:, None] * np.abs(np.column_stack([f_rho, f_m]))
    per_cell = np.zeros((mesh.n_cells, mags.shape[1]))
    for c in range(mags.shape[1]):
        per_cell[:, c] = np.bincount(mesh.face_owner, weights=mags[:, c], minlength=mesh.n_cells) + np.bincount(
            mesh.face_neighbor, weights=mags[:, c], minlength=mesh.n_cells
        )
    per_cell[:, 0] += (np.abs(cand.rho) + np.abs(prev.rho)) / dt
    per_cell[:, 1:] += (np.abs(cand.m) + np.abs(prev.m)) / dt
    return float(per_cell.max())


def _pack_residual(res: np.ndarray) -> np.ndarray:
    return res.T.ravel()


def _norm(res: np.ndarray) -> float:
    return float(np.max(np.abs(res))) if res.size else 0.0


def newton_solve(prev: State, dt: float, mesh: Mesh, gas: GasLaw, params: SchemeParams, frozen_upwind=False):
    """Damped Newton for one implicit step. Returns (state, report) or raises SolverError."""
    n = mesh.n_cells
    ref = _norm(residual(prev, prev, dt, mesh, gas, params))
    target = params.tol_nl * ref if ref > 0.0 else params.tol_nl
    # a relative target below the rounding level of the residual is unreachable
    target = max(target, ROUNDOFF_FACTOR * np.finfo(float).eps * roundoff_scale(prev, prev, dt, mesh, gas, params))
    x = prev.pack()
    cand = prev
    res = residual(prev, cand, dt, mesh, gas, params)
    rnorm = _norm(res)
    it = 0
    while rnorm > target:
        if it >= params.max_nl_iter:
            raise SolverError(
                f"Newton did not converge in {params.max_nl_iter} iterations "
                f"(residual {rnorm:.3e}, target {target:.3e})",
                {"iterations": it, "residual": rnorm, "target": target, "dt": dt},
            )
        jac = jacobian(cand, dt, mesh, gas, params, frozen_upwind=frozen_upwind)
        if it == 0:
            # rounding x itself perturbs the residual by about |J| |x| eps
            target = max(target, ROUNDOFF_FACTOR * np.finfo(float).eps * float(np.max(abs(jac) @ np.abs(x))))
        dx = spla.spsolve(jac, -_pack_residual(res))
        if not np.all(np.isfinite(dx)):
            raise SolverError("singular Newton system", {"iterations": it, "dt": dt})
        # positivity safeguard: keep min rho >= 0.1 * current min
        rho_now = x[:n]
        floor = 0.1 * rho_now.min()
        drho = dx[:n]
        lam = 1.0
        neg = drho < 0.0
        if np.any(neg):
            lam = min(1.0, float(np.min((rho_now[neg] - floor) / -drho[neg])))
        accepted = False
        for _ in range(30):
            trial = State.unpack(x + lam * dx, n)
            if np.all(trial.rho > 0.0):
                trial_res = residual(prev, trial, dt, mesh, gas, params)
                trial_norm = _norm(trial_res)
                if trial_norm <= (1.0 - 1e-4 * lam) * rnorm or trial_norm <= target:
                    accepted = True
                    break
            lam *= 0.5
        it += 1
        if not accepted:
            raise SolverError(
                "line search failed to reduce the residual",
                {"iterations": it, "residual": rnorm, "target": target, "dt": dt},
            )
        x = x + lam * dx
        cand, res, rnorm = trial, trial_res, trial_norm
    report = StepReport(
        iterations=it,
        residual=rnorm,
        reference=ref,
        halvings=0,
        min_rho=float(cand.rho.min()),
        dt=dt,
        mode="picard" if frozen_upwind else "newton",
    )
    return cand, report


def advance(prev: State, dt: float, mesh: Mesh, gas: GasLaw, params: SchemeParams):
    """One implicit step of size ``dt``, halving it on failure.

    The returned report's ``dt`` is the step actually taken, which is
    smaller than requested when halvings were needed.
    """
    if np.any(prev.rho <= 0.0):
        raise ValueError("previous state must have strictly positive density")
    last_error = None
    step = dt
    for halvings in range(params.max_dt_halvings + 1):
        modes = [False, True] if params.picard_fallback else [False]
        for frozen in modes:
            try:
                state, report = newton_solve(prev, step, mesh, gas, params, frozen_upwind=frozen)
            except SolverError as exc:
                last_error = exc
                log.debug("step dt=%g failed (%s)", step, exc)
                continue
            report.halvings = halvings
            return state, report
        step *= 0.5
    diag = dict(last_error.diagnostics) if last_error else {}
    diag.update({"requested_dt": dt, "halvings": params.max_dt_halvings, "min_rho_prev": float(prev.rho.min())})
    raise SolverError(f"implicit step failed after {params.max_dt_halvings} halvings: {last_error}", diag)


@dataclass
class InitialData:
    """Initial density and velocity as functions of points of shape (..., d)."""

    rho0: Callable[[np.ndarray], np.ndarray]
    u0: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def initial_state(data: InitialData, mesh: Mesh, params: SchemeParams) -> State:
    rho = project(data.rho0, mesh)
    u = project(data.u0, mesh)
    if u.ndim == 1:
        u = u[:, None]
    if params.vacuum_shift:
        rho = rho + mesh.h
    if np.any(rho <= 0.0):
        raise ValueError("projected initial density must be positive; enable vacuum_shift for data touching vacuum")
    return State(rho, u)


@dataclass
class Trajectory:
    """Discrete solution; ``states[k]`` is valid on [times[k], times[k+1])."""

    mesh: Mesh
    times: list[float]
    states: list[State] | None
    snapshot_times: list[float]
    snapshots: list[State]
    reports: list[StepReport] = field(default_factory=list)

    @property
    def final_time(self) -> float:
        return self.times[-1]

    def state_at(self, t: float) -> State:
        if self.states is None:
            raise ValueError("trajectory was run without storing every step")
        return self.states[_interval_index(self.times, t)]


def _interval_index(times: Sequence[float], t: float) -> int:
    tol = 1e-9 * (times[-1] - times[0] if len(times) > 1 else 1.0)
    k = int(np.searchsorted(np.asarray(times), t + tol, side="right")) - 1
    return max(0, min(k, len(times) - 1))


def run(
    data: InitialData,
    mesh: Mesh,
    gas: GasLaw,
    params: SchemeParams,
    T: float,
    snapshot_times: Sequence[float] = (),
    store_all: bool = False,
    initial: State | None = None,
):
    """March from the projected initial data to ``T``.

    Returns ``(trajectory, ledger)``. Snapshots follow the piecewise-constant
    in time convention: the snapshot at ``s`` is the state of the step whose
    interval [t_k, t_{k+1}) contains ``s`` (the final state for ``s = T``).
    """
    from .energy import EnergyLedger

    if not T > 0.0:
        raise ValueError("final time must be positive")
    snaps = sorted(float(s) for s in snapshot_times)
    if any(s < 0.0 or s > T * (1 + 1e-12) for s in snaps):
        raise ValueError("snapshot times must lie in [0, T]")
    params.validated(gas)

    state = initial if initial is not None else initial_state(data, mesh, params)
    dt_nominal = params.c_t * mesh.h
    times = [0.0]
    states = [state] if store_all else None
    ledger = EnergyLedger.start(state, mesh, gas, params)
    snapshots: list[State | None] = [None] * len(snaps)
    reports = []
    pending = 0
    t = 0.0
    step = 0
    eps_t = 1e-9 * dt_nominal

    def capture(upto: float, current: State):
        nonlocal pending
        while pending < len(snaps) and snaps[pending] < upto - eps_t:
            snapshots[pending] = current
            pending += 1

    while t < T - eps_t:
        dt = min(dt_nominal, T - t)
        new, report = advance(state, dt, mesh, gas, params)
        t_new = t + report.dt
        if abs(t_new - T) <= eps_t:
            t_new = T
        # the previous state is valid on [t, t_new)
        capture(t_new, state)
        step += 1
        ledger.record(step, t_new, state, new, report.dt)
        reports.append(report)
        state, t = new, t_new
        times.append(t)
        if store_all:
            states.append(state)
    capture(math.inf, state)

    traj = Trajectory(mesh, times, states, snaps, snapshots, reports)
    return traj, ledger


def with_params(params: SchemeParams, **changes) -> SchemeParams:
    return replace(params, **changes)
