"""Optimal two-player LQG control under delayed information sharing.

Synthesis of the optimal decentralized laws for the (1,0) and (1,inf)
sharing patterns, exact and Monte Carlo cost evaluation, and a brute-force
policy oracle that certifies them.
"""

from .estimation import EstimatorSchedule, FilterState, estimator_schedule, step_filters
from .gainopt import FStructure, GainOptResult, costate_schedule, fd_gradient_check, solve_F
from .model import (Dims, Mode, Pattern, PlantModel, Scenario, SolverOptions, ValidationReport,
                    load_scenario, validate)
from .oracle import OracleResult, exact_policy_cost, oracle_optimize, params_from_policy
from .policy import ControllerPolicy, Synthesis, assemble_policy, synthesize
from .riccati import LqrSolution, NestedGains, lqr_gains, nested_nodelay_gains
from .sim import SimulationReport, exact_closed_loop_cost, monte_carlo, propagate_moments

__version__ = "0.1.0"

__all__ = [
    "ControllerPolicy", "Dims", "EstimatorSchedule", "FStructure", "FilterState",
    "GainOptResult", "LqrSolution", "Mode", "NestedGains", "OracleResult", "Pattern",
    "PlantModel", "Scenario", "SimulationReport", "SolverOptions", "Synthesis",
    "ValidationReport", "assemble_policy", "costate_schedule", "estimator_schedule",
    "exact_closed_loop_cost", "exact_policy_cost", "fd_gradient_check", "load_scenario",
    "lqr_gains", "monte_carlo", "nested_nodelay_gains", "oracle_optimize", "params_from_policy",
    "propagate_moments", "solve_F", "step_filters", "synthesize", "validate",
]
