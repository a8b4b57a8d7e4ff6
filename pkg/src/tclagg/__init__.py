"""Aggregate finite-volume model of a thermostatically controlled load population.

Modules
-------
physics        single-TCL parameters, drift and thermostat
grid           control-volume layout of the off and on chains
assembly       rate matrix ``A``, CFL bound and transition matrix
factorization  policy/weather factorization ``P = Phi G`` and the aggregate step
ensemble       Monte-Carlo ensemble of individual TCLs
control        tracking QP and policy recovery
config, io     experiment configs and file formats
experiments    end-to-end runs used by the CLI
"""

from .assembly import (
    CflError,
    DriftSignError,
    RateMatrix,
    assemble_rate_matrix,
    check_rate_matrix,
    max_stable_dt,
    transition_matrix,
)
from .config import ConfigError, ExperimentConfig, load_config, load_preset
from .control import TrackingProblem, build_tracking_qp, design_policies, receding_horizon
from .ensemble import EnsembleConfig, EnsembleRunner, simulate_ensemble
from .factorization import (
    AlphaMismatchError,
    SwitchPolicy,
    build_factored,
    make_policy,
    nominal_policy,
    policy_matrix,
    run_aggregate,
    stationary_marginal,
    step_aggregate,
    weather_matrix,
)
from .grid import CvGrid, build_grid, grid_for_deadband
from .physics import OFF, ON, TclParams

__version__ = "0.1.0"

__all__ = [
    "AlphaMismatchError", "CflError", "ConfigError", "CvGrid", "DriftSignError", "EnsembleConfig",
    "EnsembleRunner", "ExperimentConfig", "OFF", "ON", "RateMatrix", "SwitchPolicy", "TclParams",
    "TrackingProblem", "assemble_rate_matrix", "build_factored", "build_grid", "build_tracking_qp",
    "check_rate_matrix", "design_policies", "grid_for_deadband", "load_config", "load_preset",
    "make_policy", "max_stable_dt", "nominal_policy", "policy_matrix", "receding_horizon",
    "run_aggregate", "simulate_ensemble", "stationary_marginal", "step_aggregate",
    "transition_matrix", "weather_matrix",
]
