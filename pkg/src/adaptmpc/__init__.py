"""Tube-based MPC with distributed discrete-time adaptive disturbance rejection."""

from .errors import ConfigurationError, DivergenceError, InfeasibleGovernorError
from .dynamics import (
    Box,
    ContinuousModel,
    SystemModel,
    cstr_model,
    default_x0,
    model_by_name,
    rk4_discretize,
    wingrock_model,
)
from .adaptive import (
    AdaptiveState,
    adaptive_bound,
    adaptive_control,
    apparent_disturbance_bound,
    weight_update,
)
from .trajopt import OcpSpec, OcpSolution, SolverOptions, gradient_check, solve_ocp
from .governor import ReferencePlan, TighteningSpec, solve_reference, tighten
from .mpc import TrackingConfig, TrackingSolution, solve_tracking, value_function
from .orchestrator import (
    InvariantConfig,
    InvariantReport,
    LoopConfig,
    SimLog,
    check_invariants,
    load_simlog,
    run_closed_loop,
    run_multi_agent,
    save_simlog,
)
from .config import ExperimentConfig, load_config, resolve_config

__version__ = "0.1.0"

__all__ = [
    "AdaptiveState",
    "Box",
    "ConfigurationError",
    "ContinuousModel",
    "DivergenceError",
    "ExperimentConfig",
    "InfeasibleGovernorError",
    "InvariantConfig",
    "InvariantReport",
    "LoopConfig",
    "OcpSolution",
    "OcpSpec",
    "ReferencePlan",
    "SimLog",
    "SolverOptions",
    "SystemModel",
    "TighteningSpec",
    "TrackingConfig",
    "TrackingSolution",
    "adaptive_bound",
    "adaptive_control",
    "apparent_disturbance_bound",
    "check_invariants",
    "cstr_model",
    "default_x0",
    "gradient_check",
    "load_config",
    "load_simlog",
    "model_by_name",
    "resolve_config",
    "rk4_discretize",
    "run_closed_loop",
    "run_multi_agent",
    "save_simlog",
    "solve_ocp",
    "solve_reference",
    "solve_tracking",
    "tighten",
    "value_function",
    "weight_update",
    "wingrock_model",
]
