"""Isentropic gas law p = a rho^gamma and the admissible scheme-parameter region."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class ConfigurationError(ValueError):
    """Raised when physical or scheme parameters are outside the admissible set."""


class ParameterError(ConfigurationError):
    """Rejected (gamma, alpha, beta) triple.

    ``failed`` names the strict inequality that does not hold.
    """

    def __init__(self, failed: str, message: str):
        super().__init__(message)
        self.failed = failed


def _check_nonnegative(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0.0):
        raise ValueError("density must be nonnegative")
    return rho


@dataclass(frozen=True)
class GasLaw:
    """Pressure law ``p(rho) = a * rho**gamma`` with ``1 < gamma < 2``."""

    a: float = 1.0
    gamma: float = 1.5

    def __post_init__(self):
        if not self.a > 0.0:
            raise ConfigurationError(f"pressure coefficient a must be positive (got {self.a})")
        if not 1.0 < self.gamma < 2.0:
            raise ConfigurationError(f"adiabatic exponent must satisfy 1 < gamma < 2 (got {self.gamma})")

    def pressure(self, rho):
        rho = _check_nonnegative(rho)
        return self.a * rho**self.gamma

    def pressure_derivative(self, rho):
        """dp/drho; used by the Newton Jacobian (requires rho > 0)."""
        rho = np.asarray(rho, dtype=float)
        return self.a * self.gamma * rho ** (self.gamma - 1.0)

    def potential(self, rho):
        """Pressure potential P(rho) = a/(gamma-1) rho^gamma."""
        rho = _check_nonnegative(rho)
        return self.a / (self.gamma - 1.0) * rho**self.gamma

    def potential_derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.a * self.gamma / (self.gamma - 1.0) * rho ** (self.gamma - 1.0)

    def potential_second_derivative(self, rho):
        """P''(rho) = a gamma rho^(gamma-2), singular at vacuum."""
        rho = np.asarray(rho, dtype=float)
        if np.any(rho <= 0.0):
            raise ValueError("P'' is singular at vacuum; density must be positive")
        return self.a * self.gamma * rho ** (self.gamma - 2.0)

    def potential_second_derivative_bounds(self, rho_lo, rho_hi):
        """Enclosure ``(lower, upper)`` of P'' over the convex hull of two densities.

        P'' is decreasing for gamma < 2, so the bounds are attained at the
        endpoints. Arguments may be given in either order and broadcast.
        """
        lo = np.minimum(rho_lo, rho_hi)
        hi = np.maximum(rho_lo, rho_hi)
        return self.potential_second_derivative(hi), self.potential_second_derivative(lo)

    def sound_speed(self, rho):
        rho = _check_nonnegative(rho)
        return np.sqrt(self.a * self.gamma * rho ** (self.gamma - 1.0))

    def density_from_sound_speed(self, c):
        c = np.asarray(c, dtype=float)
        return (c * c / (self.a * self.gamma)) ** (1.0 / (self.gamma - 1.0))

    def energy_density(self, rho, u):
        """Total energy density 1/2 rho |u|^2 + P(rho); ``u`` has a trailing component axis."""
        rho = _check_nonnegative(rho)
        u = np.asarray(u, dtype=float)
        return 0.5 * rho * np.sum(u * u, axis=-1) + self.potential(rho)


def total_energy_density(rho, u, gas: GasLaw):
    return gas.energy_density(rho, u)


@dataclass(frozen=True)
class SchemeParamGate:
    """Validated stabilisation exponents and the resulting consistency rates."""

    gamma: float
    alpha: float
    beta: float
    beta_upper: float
    delta1: float
    delta2: float


def beta_upper_bound(gamma: float, alpha: float) -> float:
    return (1.0 - 2.0 / gamma) - alpha / gamma


def consistency_rates(gamma: float, alpha: float, beta: float) -> tuple[float, float]:
    """``delta1 = 1 - ((alpha + 2)/(2 gamma) + (beta + 1)/2)`` and ``delta2 = (1 - alpha)/2``.

    Evaluated in rationals and rounded once, so ``delta1`` keeps its sign
    next to the upper end of the admissible ``beta`` range.
    """
    g, a, b = Fraction(gamma), Fraction(alpha), Fraction(beta)
    delta1 = 1 - ((a + 2) / (2 * g) + (b + 1) / 2)
    delta2 = (1 - a) / 2
    return float(delta1), float(delta2)


def validate_parameters(gamma: float, alpha: float, beta: float) -> SchemeParamGate:
    """Accept ``(gamma, alpha, beta)`` iff every strict inequality holds.

    Requires ``0 < alpha < 1`` and ``-1 < beta < (1 - 2/gamma) - alpha/gamma``;
    the consistency rates ``delta1``, ``delta2`` are then positive.
    """
    if not 1.0 < gamma < 2.0:
        raise ParameterError("1 < gamma < 2", f"gamma must satisfy 1 < gamma < 2 (got {gamma})")
    if not alpha > 0.0:
        raise ParameterError("0 < alpha", f"alpha must satisfy 0 < alpha < 1 (got {alpha})")
    if not alpha < 1.0:
        raise ParameterError("alpha < 1", f"alpha must satisfy 0 < alpha < 1 (got {alpha})")
    upper = beta_upper_bound(gamma, alpha)
    if not math.isfinite(beta) or not beta > -1.0:
        raise ParameterError(
            "-1 < beta", f"beta must satisfy -1 < beta < (1 - 2/gamma) - alpha/gamma = {upper:.6g} (got {beta})"
        )
    # decided exactly on the binary inputs: the rounded bound may sit on
    # either side of a float that equals it mathematically
    g, a, b = Fraction(gamma), Fraction(alpha), Fraction(beta)
    if not b < (1 - 2 / g) - a / g:
        raise ParameterError(
            "beta < (1 - 2/gamma) - alpha/gamma",
            f"beta must satisfy -1 < beta < (1 - 2/gamma) - alpha/gamma = {upper:.6g} (got {beta})",
        )
    delta1, delta2 = consistency_rates(gamma, alpha, beta)
    return SchemeParamGate(gamma, alpha, beta, upper, delta1, delta2)
