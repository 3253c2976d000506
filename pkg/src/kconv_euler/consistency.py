"""Weak-form consistency residuals, velocity-dependent error integrals and
observed decay orders.

Test functions are separable, ``phi(t, x) = theta(t) cos(pi k.x + c)``:
the time factor is a polynomial smoothstep cutoff integrated exactly over
each time slab, and the spatial factor has closed-form cell averages, so
the only discretisation error left in a residual is that of the scheme.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .eos import GasLaw
from .mesh import Mesh

# C^3 smoothstep: S(0) = 0, S(1) = 1, first three derivatives vanish at both ends
_SMOOTHSTEP = Polynomial([0, 0, 0, 0, 35, -84, 70, -20])


@dataclass(frozen=True)
class TimeCutoff:
    """theta = 1 on [0, t0], 1 - S((t - t0)/(t1 - t0)) on [t0, t1], 0 afterwards."""

    t0: float
    t1: float

    def __post_init__(self):
        if not 0.0 <= self.t0 < self.t1:
            raise ValueError("time cutoff needs 0 <= t0 < t1")

    @property
    def _width(self) -> float:
        return self.t1 - self.t0

    def __call__(self, t):
        s = np.clip((np.asarray(t, dtype=float) - self.t0) / self._width, 0.0, 1.0)
        return 1.0 - _SMOOTHSTEP(s)

    def integral(self, a: float, b: float) -> float:
        """Exact integral of theta over [a, b]."""
        return self._antiderivative(b) - self._antiderivative(a)

    def _antiderivative(self, t: float) -> float:
        w = self._width
        if t <= self.t0:
            return t
        ramp = _SMOOTHSTEP.integ()
        if t >= self.t1:
            return self.t0 + w * (1.0 - float(ramp(1.0)))
        s = (t - self.t0) / w
        return self.t0 + w * (s - float(ramp(s)))

    def derivative_bounds(self, order: int = 3) -> list[float]:
        """max |theta^(j)| for j = 0..order, from the critical points of each derivative."""
        out = [1.0]
        p = _SMOOTHSTEP
        for j in range(1, order + 1):
            p = p.deriv()
            crit = [0.0, 1.0] + [r.real for r in p.deriv().roots() if abs(r.imag) < 1e-12 and 0 <= r.real <= 1]
            out.append(max(abs(float(p(c))) for c in crit) / self._width**j)
        return out


@dataclass(frozen=True)
class TestFunction:
    """phi(t, x) = theta(t) cos(pi k.x + phase); vector form phi * direction."""

    __test__ = False  # not a pytest class

    k: tuple[int, ...]
    phase: float
    cutoff: TimeCutoff
    direction: tuple[float, ...] | None = None
    name: str = ""

    @property
    def dim(self) -> int:
        return len(self.k)

    def _wave(self) -> np.ndarray:
        return np.pi * np.asarray(self.k, dtype=float)

    def value(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.cutoff(t) * np.cos(x @ self._wave() + self.phase)

    def _smoothing(self, mesh: Mesh) -> float:
        # average of cos(w x + c) over a cell of width h is cos(w x_K + c) sinc(w h / 2)
        out = 1.0
        for w, h in zip(self._wave(), mesh.spec.h_axis):
            z = 0.5 * w * h
            out *= 1.0 if z == 0.0 else math.sin(z) / z
        return out

    def cell_average(self, mesh: Mesh) -> np.ndarray:
        """Exact cell averages of the spatial factor (Pi_T psi)."""
        return self._smoothing(mesh) * np.cos(mesh.centers @ self._wave() + self.phase)

    def grad_cell_average(self, mesh: Mesh) -> np.ndarray:
        """Exact cell averages of grad psi, shape (N, d)."""
        s = -self._smoothing(mesh) * np.sin(mesh.centers @ self._wave() + self.phase)
        return s[:, None] * self._wave()[None, :]

    def c3_norm(self) -> float:
        """Bound on max |D^a phi| over |a| <= 3 (space-time), times |direction|."""
        th = self.cutoff.derivative_bounds(3)
        wmax = float(np.max(np.abs(self._wave()))) if self.dim else 0.0
        best = 0.0
        for jt in range(4):
            for jx in range(4 - jt):
                best = max(best, th[jt] * wmax**jx)
        scale = 1.0 if self.direction is None else float(np.linalg.norm(self.direction))
        return best * scale

    def vector_direction(self) -> np.ndarray:
        if self.direction is None:
            e = np.zeros(self.dim)
            e[0] = 1.0
            return e
        return np.asarray(self.direction, dtype=float)


def default_bank(dim: int, T: float, modes: int = 2) -> list[TestFunction]:
    """Cosine and sine modes k = 1..modes along each axis, vector direction along the same axis."""
    cut = TimeCutoff(0.25 * T, 0.75 * T)
    bank = []
    for axis in range(dim):
        for m in range(1, modes + 1):
            k = tuple(m if i == axis else 0 for i in range(dim))
            e = tuple(1.0 if i == axis else 0.0 for i in range(dim))
            for phase, label in ((0.0, "cos"), (-0.5 * np.pi, "sin")):
                bank.append(TestFunction(k, phase, cut, e, name=f"{label}_k{m}_x{axis}"))
    return bank


def _slabs(traj):
    """(state, t_a, t_b) for every state whose validity interval meets [0, T)."""
    T = traj.times[-1]
    states = traj.states
    if states is None:
        raise ValueError("consistency residuals need a trajectory run with store_all=True")
    for k in range(len(traj.times) - 1):
        yield states[k], traj.times[k], min(traj.times[k + 1], T)


def residual_continuity(traj, phi: TestFunction) -> float:
    """int_0^T int [rho dt phi + rho u . grad phi] + int rho^0 phi(0); equals -int int e1."""
    mesh = traj.mesh
    psi = phi.cell_average(mesh)
    grad = phi.grad_cell_average(mesh)
    vol = mesh.volumes
    terms = []
    for state, a, b in _slabs(traj):
        dtheta = float(phi.cutoff(b) - phi.cutoff(a))
        itheta = phi.cutoff.integral(a, b)
        terms.append(dtheta * math.fsum(vol * state.rho * psi))
        terms.append(itheta * math.fsum(vol * state.rho * np.sum(state.u * grad, axis=1)))
    s0 = traj.states[0]
    terms.append(float(phi.cutoff(0.0)) * math.fsum(vol * s0.rho * psi))
    return math.fsum(terms)


def _face_jumps(mesh: Mesh, values):
    v = np.asarray(values)
    return v[mesh.face_neighbor] - v[mesh.face_owner]


def residual_momentum(traj, phi: TestFunction, gas: GasLaw, beta: float):
    """Limit-system residual of the momentum equation and the diffusive correction d.

    Returns ``(value, d)`` with value = int_0^T int [m . dt phi + (m (x) u) : grad phi
    + p div phi] + int m^0 . phi(0), and
    d = -h^beta int_0^T sum_s |s| [[u]] . [[Pi phi]]; the momentum consistency
    error is int int e2 = -(value + d).
    """
    mesh = traj.mesh
    e = phi.vector_direction()
    psi = phi.cell_average(mesh)
    grad = phi.grad_cell_average(mesh)
    vol = mesh.volumes
    jpsi = _face_jumps(mesh, psi)
    hb = mesh.h**beta
    terms, dterms = [], []
    for state, a, b in _slabs(traj):
        dtheta = float(phi.cutoff(b) - phi.cutoff(a))
        itheta = phi.cutoff.integral(a, b)
        m = state.m
        me = m @ e
        terms.append(dtheta * math.fsum(vol * me * psi))
        conv = me * np.sum(state.u * grad, axis=1)
        press = gas.pressure(state.rho) * (grad @ e)
        terms.append(itheta * math.fsum(vol * (conv + press)))
        ju = _face_jumps(mesh, state.u) @ e
        dterms.append(itheta * math.fsum(mesh.face_area * ju * jpsi))
    s0 = traj.states[0]
    terms.append(float(phi.cutoff(0.0)) * math.fsum(vol * (s0.m @ e) * psi))
    return math.fsum(terms), -hb * math.fsum(dterms)


def error_terms(traj, phi: TestFunction) -> dict:
    """E1 and E2 for r = rho and r = rho u_i, integrated over [0, T).

    E1(r) = 1/2 int sum_s |s| |avg(u).n| [[r]] [[Pi phi]],
    E2(r) = 1/4 int sum_s |s| [[u]].n [[r]] [[Pi phi]].
    """
    mesh = traj.mesh
    o, nb, ax = mesh.face_owner, mesh.face_neighbor, mesh.face_axis
    rows = np.arange(o.size)
    jpsi = _face_jumps(mesh, phi.cell_average(mesh))
    d = mesh.dim
    names = ["rho"] + [f"m{i}" for i in range(d)]
    e1 = {n: [] for n in names}
    e2 = {n: [] for n in names}
    for state, a, b in _slabs(traj):
        itheta = phi.cutoff.integral(a, b)
        u = state.u
        vn = 0.5 * (u[o][rows, ax] + u[nb][rows, ax])
        jun = u[nb][rows, ax] - u[o][rows, ax]
        fields = [state.rho] + [state.m[:, i] for i in range(d)]
        for n, r in zip(names, fields):
            jr = r[nb] - r[o]
            e1[n].append(itheta * math.fsum(mesh.face_area * np.abs(vn) * jr * jpsi))
            e2[n].append(itheta * math.fsum(mesh.face_area * jun * jr * jpsi))
    return {
        "E1": {n: 0.5 * math.fsum(v) for n, v in e1.items()},
        "E2": {n: 0.25 * math.fsum(v) for n, v in e2.items()},
    }


def order_estimate(values) -> np.ndarray:
    """Observed orders log2(v_i / v_{i+1}) for values at h, h/2, h/4, ..."""
    v = np.abs(np.asarray(values, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(v[:-1] / v[1:])


def fitted_order(values, h=None) -> float:
    """Least-squares slope of log|v| against log h (dyadic h by default)."""
    v = np.abs(np.asarray(values, dtype=float))
    if h is None:
        h = 0.5 ** np.arange(v.size)
    slope, _ = np.polyfit(np.log(np.asarray(h, dtype=float)), np.log(v), 1)
    return float(slope)


@dataclass
class ConsistencyRow:
    test: str
    n: int
    h: float
    c3: float
    e1: float
    e2: float
    d: float
    E1: dict
    E2: dict


@dataclass
class ConsistencyReport:
    rows: list[ConsistencyRow] = field(default_factory=list)

    def tests(self) -> list[str]:
        return list(dict.fromkeys(r.test for r in self.rows))

    def series(self, test: str, key: str) -> np.ndarray:
        """Absolute values of one quantity across levels; keys like 'e1', 'd', 'E1.rho'."""
        rows = [r for r in self.rows if r.test == test]
        if "." in key:
            kind, comp = key.split(".")
            return np.array([abs(getattr(r, kind)[comp]) for r in rows])
        return np.array([abs(getattr(r, key)) for r in rows])

    def keys(self) -> list[str]:
        r = self.rows[0]
        return ["e1", "e2", "d"] + [f"E1.{c}" for c in r.E1] + [f"E2.{c}" for c in r.E2]

    def orders(self, test: str, key: str) -> np.ndarray:
        return order_estimate(self.series(test, key))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        comps = list(self.rows[0].E1) if self.rows else []
        w.writerow(["test", "n", "h", "c3_norm", "e1", "e2", "d"] + [f"E1_{c}" for c in comps] + [f"E2_{c}" for c in comps])
        for r in self.rows:
            vals = [r.h, r.c3, r.e1, r.e2, r.d] + [r.E1[c] for c in comps] + [r.E2[c] for c in comps]
            w.writerow([r.test, r.n] + ["%.17g" % v for v in vals])
        return buf.getvalue()


def report_for(trajectories, bank, gas: GasLaw, beta: float) -> ConsistencyReport:
    """Evaluate every test function on every trajectory (ordered coarse to fine)."""
    rep = ConsistencyReport()
    for phi in bank:
        for traj in trajectories:
            r1 = residual_continuity(traj, phi)
            r2, d = residual_momentum(traj, phi, gas, beta)
            errs = error_terms(traj, phi)
            rep.rows.append(
                ConsistencyRow(
                    phi.name, traj.mesh.spec.cells_per_axis[0], traj.mesh.h, phi.c3_norm(),
                    e1=-r1, e2=-(r2 + d), d=d, E1=errs["E1"], E2=errs["E2"],
                )
            )
    return rep
