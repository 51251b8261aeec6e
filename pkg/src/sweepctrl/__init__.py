"""Convoy control under a polyhedral sweeping process.

Simulation by the catching-up scheme, control search over the simulator,
and first-order optimality certificates, plus a file-based run harness.
"""

__version__ = "0.1.0"

from .geometry import (
    ActiveSet,
    CoincidentCentersError,
    ConstraintViolationError,
    DecomposeResult,
    HalfSpace,
    InfeasiblePolyhedronError,
    LicqReport,
    Polyhedron,
    active_indices,
    default_eps_act,
    disk_gap,
    licq_check,
    normal_cone_decompose,
    project_polyhedron,
)
from .model import (
    ControlRegion,
    FleetConfig,
    InvalidFleetError,
    ProblemSpec,
    RobotSpec,
    corridor_polyhedron,
    drift,
    position_angle,
    terminal_cost,
)
from .sweep import (
    Grid,
    SimulationError,
    Trajectory,
    catching_up_step,
    simulate,
    state_projection_step,
    sup_norm_gap,
    velocity_constraints,
)
from .pmp import (
    Certificate,
    ConditionReport,
    MisalignedContactError,
    adjoint_backward,
    certify,
    eta_closed_form,
    maximization_residual,
    trajectory_closed_form,
)
from .opt import (
    ControlSchedule,
    OptResult,
    evaluate,
    fd_gradient_descent,
    grid_oracle,
    optimize_controls,
    pattern_search,
    straddle_oracle,
)
from .harness import (
    ParseError,
    RunRecord,
    Scenario,
    batch,
    build_spec,
    load_trajectory_csv,
    parse_scenario,
    run,
    write_trajectory_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
