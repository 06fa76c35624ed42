"""Trajectory optimization for hybrid dynamical systems with guarded resets.

Simulates event-driven hybrid dynamics to tight tolerances, propagates
first-order sensitivities through impacts with saltation matrices, and wraps
the resulting iLQR solver in a receding-horizon tracking controller that
stays well-posed when the plant and the reference are in different modes.
"""

from .checks import CheckResult, run_all_checks
from .cost import CostModel, StageTerms
from .errors import (
    BackwardPassError,
    ConfigError,
    DomainError,
    EventLocationError,
    ExtensionCoverageError,
    ForwardPassError,
    HilqrError,
    IntegrationError,
    SimulationError,
    SolverError,
    TransversalityError,
    VerificationError,
    ZenoError,
)
from .hybrid import (
    HybridSystem,
    Mode,
    SaltationResult,
    Transition,
    linearize_flow_step,
    saltation_matrix,
)
from .mpc import (
    ClosedLoopLog,
    ForceWeightConfig,
    MpcConfig,
    MpcSolution,
    TrackingProblem,
    force_weighted_penalty,
    force_weights,
    mpc_step,
    run_mpc,
)
from .simulate import (
    build_extensions,
    closed_loop_rollout,
    integrate_step,
    locate_event,
    rollout,
)
from .solver import (
    GainSchedule,
    SolveOptions,
    SolveReport,
    backward_pass,
    expected_reduction,
    forward_pass,
    linearize_trajectory,
    solve,
)
from .systems import (
    BouncingBallParams,
    ball_saltation_oracle,
    bouncing_ball,
    classify_ball_mode,
    double_integrator,
    make_single_bounce_reference,
)
from .trajectory import (
    EventRecord,
    HybridTrajectory,
    ReferenceExtension,
    lookup_reference,
    read_trajectory,
    write_events_json,
    write_trajectory_csv,
)

__all__ = [
    "BackwardPassError",
    "BouncingBallParams",
    "CheckResult",
    "ClosedLoopLog",
    "ConfigError",
    "CostModel",
    "DomainError",
    "EventLocationError",
    "EventRecord",
    "ExtensionCoverageError",
    "ForceWeightConfig",
    "ForwardPassError",
    "GainSchedule",
    "HilqrError",
    "HybridSystem",
    "HybridTrajectory",
    "IntegrationError",
    "Mode",
    "MpcConfig",
    "MpcSolution",
    "ReferenceExtension",
    "SaltationResult",
    "SimulationError",
    "SolveOptions",
    "SolveReport",
    "SolverError",
    "StageTerms",
    "TrackingProblem",
    "Transition",
    "TransversalityError",
    "VerificationError",
    "ZenoError",
    "ball_saltation_oracle",
    "backward_pass",
    "bouncing_ball",
    "build_extensions",
    "classify_ball_mode",
    "closed_loop_rollout",
    "double_integrator",
    "expected_reduction",
    "force_weighted_penalty",
    "force_weights",
    "forward_pass",
    "integrate_step",
    "linearize_flow_step",
    "linearize_trajectory",
    "locate_event",
    "lookup_reference",
    "make_single_bounce_reference",
    "mpc_step",
    "read_trajectory",
    "rollout",
    "run_all_checks",
    "run_mpc",
    "saltation_matrix",
    "solve",
    "write_events_json",
    "write_trajectory_csv",
]

__version__ = "0.1.0"
