"""Two-stage distributionally robust MPC over Wasserstein ambiguity sets.

The controller plans an input sequence against the worst disturbance
distribution within a transport-cost ball around recent observations, with
state-constraint violations priced by an exact penalty. Each step is solved
by a cutting-plane method over a dual reformulation.
"""

from .analysis import (
    PerformanceBound,
    StabilityConstants,
    asymptotic_bound,
    audit_trajectory,
    compute_constants,
)
from .config import RunConfig, load_config
from .cutting_plane import CuttingPlaneConfig, run_cutting_plane
from .errors import (
    ConfigError,
    ContractionWarning,
    ControllerError,
    DomainError,
    DrmpcError,
    SolverError,
    StructuralError,
)
from .reformulation import TsdrProblem
from .simulator import Controller, ScenarioConfig, run_scenario, simulate_run

__all__ = [
    "ConfigError", "ContractionWarning", "Controller", "ControllerError", "CuttingPlaneConfig",
    "DomainError", "DrmpcError", "PerformanceBound", "RunConfig", "ScenarioConfig",
    "SolverError", "StabilityConstants", "StructuralError", "TsdrProblem", "asymptotic_bound",
    "audit_trajectory", "compute_constants", "load_config", "run_cutting_plane",
    "run_scenario", "simulate_run",
]
