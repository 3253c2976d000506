"""Implicit finite volume scheme for the isentropic Euler system on the periodic
torus, with a mesh-refinement harness for Cesàro means and Young measures."""

from .cases import RiemannState, build_case, exact_rarefaction, riemann, smooth_periodic, two_state_synthetic
from .eos import ConfigurationError, GasLaw, ParameterError, validate_parameters
from .energy import EnergyLedger, balance_audit, discrete_energy
from .kconv import StudyConfig, run_study
from .mesh import MeshSpec, build_mesh, project, restrict
from .solver import SchemeParams, SolverError, State, advance, residual, run

__all__ = [
    "ConfigurationError",
    "EnergyLedger",
    "GasLaw",
    "MeshSpec",
    "ParameterError",
    "RiemannState",
    "SchemeParams",
    "SolverError",
    "State",
    "StudyConfig",
    "advance",
    "balance_audit",
    "build_case",
    "build_mesh",
    "discrete_energy",
    "exact_rarefaction",
    "project",
    "residual",
    "restrict",
    "riemann",
    "run",
    "run_study",
    "smooth_periodic",
    "two_state_synthetic",
    "validate_parameters",
]
