"""Null controls for coupled parabolic systems with one control fewer than equations.

The fictitious-control method: control every equation with a penalized
HUM solve, then remove the surplus control through an explicit
differential operator ``M`` with ``L ∘ M = N`` (or ``M* ∘ L* = Id``).
"""

__version__ = "0.1.0"

from .discretize import CrankNicolsonSolver, DiscreteNorms, Grid, Trajectory, duality_residual
from .hum import HumConfig, HumSolution, cost_identity_check, hum_solve, penalty_sweep
from .model import CoefficientField, CoefficientSet, ProblemSpec, find_i0, find_i0_for, validate_spec
from .pipeline import approximate_control, build_cutoff, make_hum_config, run_pipeline
from .weights import build_eta0, build_weights

__all__ = [
    "CoefficientField", "CoefficientSet", "ProblemSpec", "find_i0", "find_i0_for", "validate_spec",
    "Grid", "Trajectory", "DiscreteNorms", "CrankNicolsonSolver", "duality_residual",
    "build_eta0", "build_weights",
    "HumConfig", "HumSolution", "hum_solve", "cost_identity_check", "penalty_sweep",
    "build_cutoff", "make_hum_config", "run_pipeline", "approximate_control",
]
