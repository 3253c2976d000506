"""Empirical Young measures over phase space S = [0, inf) x R^d.

A measure is an equal-weight atom list; observables are bounded continuous
functions of a phase-space point (rho, m).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .eos import GasLaw

PSD_TOL = 1e-12


class VacuumAtomError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalYoungMeasure:
    atoms: np.ndarray  # (N, d + 1): rho then momentum components
    probe: object = None

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        if atoms.shape[0] == 0:
            raise ValueError("empirical measure needs at least one atom")
        if np.any(atoms[:, 0] < 0.0):
            raise ValueError("atoms must have nonnegative density")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_atoms, 1.0 / self.n_atoms)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1] - 1


def pair(V: EmpiricalYoungMeasure, g) -> float:
    """<V; g> = (1/N) sum_k g(atom_k)."""
    values = np.asarray(g(V.atoms), dtype=float)
    return float(np.mean(values))


def barycenter(V: EmpiricalYoungMeasure) -> np.ndarray:
    return V.atoms.mean(axis=0)


@dataclass
class DefectEstimates:
    D_kin: float
    D_int: float
    D_conv: np.ndarray
    probe: object = None


@dataclass(frozen=True)
class PowerPotential:
    """P(rho) = a/(gamma-1) rho^gamma for any gamma > 1.

    The defect functionals only need a convex potential, so they are not
    tied to the solver's range 1 < gamma < 2.
    """

    a: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not (self.a > 0.0 and self.gamma > 1.0):
            raise ValueError("power potential needs a > 0 and gamma > 1")

    def potential(self, rho):
        return self.a / (self.gamma - 1.0) * np.asarray(rho, dtype=float) ** self.gamma


def defects(V: EmpiricalYoungMeasure, gas: GasLaw | PowerPotential) -> DefectEstimates:
    """Jensen gaps of the convex energy functionals at the barycenter.

    ``gas`` is anything with a ``potential(rho)`` method.
    """
    rho = V.atoms[:, 0]
    m = V.atoms[:, 1:]
    if np.any(rho <= 0.0):
        raise VacuumAtomError(f"vacuum atom in the measure at probe {V.probe!r}")
    rho_bar = rho.mean()
    m_bar = m.mean(axis=0)
    D_int = float(np.mean(gas.potential(rho)) - gas.potential(rho_bar))
    # <m (x) m / rho> - m_bar (x) m_bar / rho_bar rewritten as a weighted
    # covariance of velocities: manifestly PSD and exactly zero for a Dirac
    w = m / rho[:, None] - m_bar / rho_bar
    D_conv = np.einsum("k,ki,kj->ij", rho, w, w) / V.n_atoms
    D_conv = 0.5 * (D_conv + D_conv.T)
    D_kin = float(0.5 * np.trace(D_conv))
    return DefectEstimates(D_kin, D_int, D_conv, V.probe)


def sphere_sample(d: int, n: int = 64) -> np.ndarray:
    """Deterministic unit vectors in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = np.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5**0.5) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def psd_check(D_conv, xi=None, tol: float = PSD_TOL):
    """Return ``(passed, worst)`` with worst the minimum of xi^T D xi over the
    sampled unit directions and the eigenvectors of the symmetric part."""
    D = np.atleast_2d(np.asarray(D_conv, dtype=float))
    D = 0.5 * (D + D.T)
    if xi is None:
        xi = sphere_sample(D.shape[0])
    xi = np.asarray(xi, dtype=float)
    xi = xi / np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("ki,ij,kj->k", xi, D, xi)
    worst = min(float(quad.min()), float(np.linalg.eigvalsh(D).min()))
    return worst >= -tol, worst


@dataclass(frozen=True)
class Observable:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sup_norm: float
    lipschitz: float
    kind: str

    def __call__(self, U):
        return self.fn(np.asarray(U, dtype=float))


def bump(center, radius: float, name: str | None = None) -> Observable:
    """max(0, 1 - |U - c|^2 / r^2)^2, supported in the closed ball of radius r."""
    c = np.asarray(center, dtype=float)
    r2 = float(radius) ** 2

    def fn(U):
        s = np.sum((U - c) ** 2, axis=-1) / r2
        return np.maximum(0.0, 1.0 - s) ** 2

    # max |grad| of (1 - s)^2 is attained at |U - c| = r / sqrt(3)
    lip = 8.0 / (3.0 * math.sqrt(3.0) * radius)
    return Observable(name or f"bump{tuple(np.round(c, 6))}", fn, 1.0, lip, "bump")


def ramp(direction, offset: float = 0.0, name: str | None = None) -> Observable:
    """tanh(l . U + offset)."""
    w = np.asarray(direction, dtype=float)

    def fn(U):
        return np.tanh(U @ w + offset)

    return Observable(name or f"ramp{tuple(np.round(w, 6))}", fn, 1.0, float(np.linalg.norm(w)), "ramp")


@dataclass(frozen=True)
class ObservableBank:
    observables: tuple[Observable, ...]

    def __len__(self):
        return len(self.observables)

    def __iter__(self):
        return iter(self.observables)

    def __getitem__(self, i):
        return self.observables[i]

    @property
    def max_sup(self) -> float:
        return max(g.sup_norm for g in self.observables)

    def evaluate(self, U) -> np.ndarray:
        """Values of every observable at points ``U`` (..., d + 1) -> (..., G)."""
        U = np.asarray(U, dtype=float)
        return np.stack([g(U) for g in self.observables], axis=-1)

    @classmethod
    def from_range(
        cls, lo, hi, centers_per_axis: int = 3, pad: float = 0.2, radius_factor: float = 1.0, min_width: float = 0.1
    ):
        """Bumps on a grid over the padded box [lo, hi] plus one ramp per coordinate.

        Bump radius is ``radius_factor`` times the padded box diagonal
        divided by ``centers_per_axis - 1`` (the box diagonal for a single
        center); ramps are scaled so tanh sweeps (-1, 1) over the box. Each
        side of the box is at least ``min_width`` times the data scale.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        # near-degenerate ranges get a box on the data scale, so bump slopes
        # (and roundoff in evaluating them) stay of order one
        scale = max(1.0, float(np.max(np.abs(np.concatenate([lo, hi])))))
        width = np.maximum(hi - lo, min_width * scale)
        lo_p = lo - pad * width
        hi_p = hi + pad * width
        span = hi_p - lo_p
        k = max(int(centers_per_axis), 1)
        if k == 1:
            axes = [np.array([0.5 * (a + b)]) for a, b in zip(lo_p, hi_p)]
            spacing = float(np.linalg.norm(span))
        else:
            axes = [np.linspace(a, b, k) for a, b in zip(lo_p, hi_p)]
            spacing = float(np.linalg.norm(span)) / (k - 1)
        radius = radius_factor * spacing
        obs = [bump(np.array(c), radius, name=f"bump_{i}") for i, c in enumerate(itertools.product(*axes))]
        mid = 0.5 * (lo_p + hi_p)
        for i in range(lo.size):
            w = np.zeros(lo.size)
            w[i] = 2.0 / span[i]
            obs.append(ramp(w, -float(w @ mid), name=f"ramp_{i}"))
        return cls(tuple(obs))


def narrow_diff(V1: EmpiricalYoungMeasure, V2: EmpiricalYoungMeasure, bank) -> float:
    """max over the bank of |<V1; g> - <V2; g>|."""
    return max(abs(pair(V1, g) - pair(V2, g)) for g in bank)
