"""Distributed LQ control for ensembles of identical linear subsystems
coupled through a constraint on their weighted-average behaviour."""

__version__ = "0.1.0"

from .are import (
    StabilityReport,
    SteadySolution,
    gains,
    observability,
    solve_are,
    solve_coupled_are,
    solve_pbar,
    spectral_radius,
    sqrt_factor,
    stability_report,
    synthesize_steady,
)
from .estimator import DistributedLQR
from .model import (
    ConstraintPolicy,
    Ensemble,
    InitialCondition,
    Tolerances,
    make_ensemble,
    validate,
    weighted_average,
)
from .riccati import (
    GainSchedule,
    naive_policy_value,
    optimal_cost,
    pbar_step,
    riccati_step,
    synthesize_finite,
)
from .sim import Trajectory, accumulated_cost, constraint_check, simulate
from .verify import (
    CostateTrace,
    OracleSolution,
    centralized_oracle,
    costates_closed_form,
    mp_residuals,
    verify_instance,
)

__all__ = [
    "ConstraintPolicy",
    "CostateTrace",
    "DistributedLQR",
    "Ensemble",
    "GainSchedule",
    "InitialCondition",
    "OracleSolution",
    "StabilityReport",
    "SteadySolution",
    "Tolerances",
    "Trajectory",
    "accumulated_cost",
    "centralized_oracle",
    "constraint_check",
    "costates_closed_form",
    "gains",
    "make_ensemble",
    "mp_residuals",
    "naive_policy_value",
    "observability",
    "optimal_cost",
    "pbar_step",
    "riccati_step",
    "simulate",
    "solve_are",
    "solve_coupled_are",
    "solve_pbar",
    "spectral_radius",
    "sqrt_factor",
    "stability_report",
    "synthesize_finite",
    "synthesize_steady",
    "validate",
    "verify_instance",
    "weighted_average",
]
