"""Discrete energy ledger and interval audit of the per-step energy balance.

For one implicit step the scheme satisfies exactly (up to the nonlinear
solve tolerance)

    D_t E + sum_s |s| (h^a avg(rho) [[u]]^2 + h^b [[u]]^2)
        = - dt/2 sum_K |K| P''(xi_K) (D_t rho_K)^2
          - sum_s |s| P''(eta_s) [[rho]]^2 (h^a + |v.n|/2)
          - dt/2 sum_K |K| rho_K^{k-1} |D_t u_K|^2
          - 1/2 sum_s |s| rho^up |v.n| [[u]]^2

with unknown intermediate densities xi, eta. P'' is decreasing for
gamma < 2, so each P''-weighted sum is enclosed by evaluating P'' at the
ends of the relevant density hull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eos import GasLaw
from .mesh import Mesh

AUDIT_REL_TOL = 1e-6
MONOTONE_REL_TOL = 1e-8


class EnergyAuditError(AssertionError):
    def __init__(self, record: "AuditRecord"):
        super().__init__(
            f"energy balance violated at step {record.step}: left side {record.left:.6e} "
            f"not in [{record.rhs_lo:.6e}, {record.rhs_hi:.6e}] (+/- {record.eps:.3e})"
        )
        self.record = record


def discrete_energy(state, mesh: Mesh, gas: GasLaw) -> float:
    return math.fsum(mesh.volumes * gas.energy_density(state.rho, state.u))


@dataclass
class AuditRecord:
    step: int
    t: float
    E: float
    dtE: float
    D_num: float
    rhs_known: float
    rhs_lo: float
    rhs_hi: float
    rhs_exact: float
    eps: float
    audit_pass: bool

    @property
    def left(self) -> float:
        return self.dtE + self.D_num


def _face_terms(state, mesh: Mesh, params):
    o, nb, ax = mesh.face_owner, mesh.face_neighbor, mesh.face_axis
    rows = np.arange(o.size)
    rho_in, rho_out = state.rho[o], state.rho[nb]
    du = state.u[nb] - state.u[o]
    du2 = np.sum(du * du, axis=1)
    vn = 0.5 * (state.u[o][rows, ax] + state.u[nb][rows, ax])
    return rho_in, rho_out, du2, vn


def balance_terms(prev, nxt, dt: float, mesh: Mesh, gas: GasLaw, params) -> dict:
    """Every term of the per-step energy balance, with interval bounds for the P'' terms."""
    h = mesh.h
    ha, hb = h**params.alpha, h**params.beta
    area = mesh.face_area
    vol = mesh.volumes

    E_prev = discrete_energy(prev, mesh, gas)
    E_next = discrete_energy(nxt, mesh, gas)
    dtE = (E_next - E_prev) / dt

    rho_in, rho_out, du2, vn = _face_terms(nxt, mesh, params)
    D_num = math.fsum(area * (ha * 0.5 * (rho_in + rho_out) * du2 + hb * du2))

    dtu = (nxt.u - prev.u) / dt
    kin_time = math.fsum(vol * prev.rho * np.sum(dtu * dtu, axis=1)) * dt / 2.0
    rho_up = np.where(vn >= 0.0, rho_in, rho_out)
    kin_face = 0.5 * math.fsum(area * rho_up * np.abs(vn) * du2)
    rhs_known = -kin_time - kin_face

    dtrho = (nxt.rho - prev.rho) / dt
    cell_w = vol * dtrho * dtrho * dt / 2.0
    cell_lo_pp, cell_hi_pp = gas.potential_second_derivative_bounds(prev.rho, nxt.rho)
    face_w = area * (rho_out - rho_in) ** 2 * (ha + 0.5 * np.abs(vn))
    face_lo_pp, face_hi_pp = gas.potential_second_derivative_bounds(rho_in, rho_out)

    # terms carry a minus sign, so the upper P'' bound gives the lower end
    pp_lo = -math.fsum(cell_w * cell_hi_pp) - math.fsum(face_w * face_hi_pp)
    pp_hi = -math.fsum(cell_w * cell_lo_pp) - math.fsum(face_w * face_lo_pp)

    # the same P'' terms in closed (Bregman) form, no intermediate points needed
    P, dP = gas.potential, gas.potential_derivative
    cell_exact = math.fsum(vol * (P(prev.rho) - P(nxt.rho) - dP(nxt.rho) * (prev.rho - nxt.rho))) / dt
    pos, neg = np.maximum(vn, 0.0), np.minimum(vn, 0.0)
    up_exact = pos * (P(rho_in) - P(rho_out) - dP(rho_out) * (rho_in - rho_out)) - neg * (
        P(rho_out) - P(rho_in) - dP(rho_in) * (rho_out - rho_in)
    )
    diff_exact = ha * (rho_out - rho_in) * (dP(rho_out) - dP(rho_in))
    face_exact = math.fsum(area * (up_exact + diff_exact))
    rhs_exact = rhs_known - cell_exact - face_exact

    return {
        "E_prev": E_prev,
        "E": E_next,
        "dtE": dtE,
        "D_num": D_num,
        "rhs_known": rhs_known,
        "rhs_lo": rhs_known + pp_lo,
        "rhs_hi": rhs_known + pp_hi,
        "rhs_exact": rhs_exact,
    }


def balance_audit(prev, nxt, dt, mesh, gas, params, E0: float, step: int = 0, t: float = 0.0) -> AuditRecord:
    terms = balance_terms(prev, nxt, dt, mesh, gas, params)
    eps = AUDIT_REL_TOL * E0
    left = terms["dtE"] + terms["D_num"]
    ok = (terms["rhs_lo"] - eps <= left <= terms["rhs_hi"] + eps) and left <= eps
    return AuditRecord(
        step=step,
        t=t,
        E=terms["E"],
        dtE=terms["dtE"],
        D_num=terms["D_num"],
        rhs_known=terms["rhs_known"],
        rhs_lo=terms["rhs_lo"],
        rhs_hi=terms["rhs_hi"],
        rhs_exact=terms["rhs_exact"],
        eps=eps,
        audit_pass=bool(ok),
    )


@dataclass
class EnergyLedger:
    E0: float
    mesh: Mesh = field(repr=False)
    gas: GasLaw = field(repr=False)
    params: object = field(repr=False)
    records: list[AuditRecord] = field(default_factory=list)

    @classmethod
    def start(cls, state, mesh, gas, params) -> "EnergyLedger":
        return cls(discrete_energy(state, mesh, gas), mesh, gas, params)

    def record(self, step: int, t: float, prev, nxt, dt: float) -> AuditRecord:
        rec = balance_audit(prev, nxt, dt, self.mesh, self.gas, self.params, self.E0, step, t)
        self.records.append(rec)
        return rec

    @property
    def energies(self) -> np.ndarray:
        return np.array([self.E0] + [r.E for r in self.records])

    def all_pass(self) -> bool:
        return all(r.audit_pass for r in self.records)

    def first_failure(self) -> AuditRecord | None:
        return next((r for r in self.records if not r.audit_pass), None)

    def check(self) -> None:
        bad = self.first_failure()
        if bad is not None:
            raise EnergyAuditError(bad)

    def is_monotone(self, rel_tol: float = MONOTONE_REL_TOL) -> bool:
        E = self.energies
        return bool(np.all(E[1:] <= E[:-1] + rel_tol * self.E0))

    def rows(self):
        for r in self.records:
            yield (r.step, r.t, r.E, r.dtE, r.D_num, r.rhs_lo, r.rhs_hi, r.audit_pass)
