"""Communication-aware trajectory planning for robotic data gathering."""
from .comm import CommParams, DomainViolation, Sensor, comm_utility, spectral_efficiency, snr, surrogate, surrogate_gradient
from .dynamics import Control, Limits, LinearizedDynamics, check_limits, linearize, rollout, step_nonlinear
from .geometry import (
    Circle,
    ConvexPolytope,
    DegenerateInput,
    NotSeparable,
    Pose,
    contains,
    polytope_distance,
    polytope_from_vertices,
    rectangle,
    separating_hyperplane,
    transform_polytope,
)
from .planner import (
    PlannerConfig,
    PlanResult,
    ReferenceWindow,
    ReferenceInCollision,
    comm_regularizer,
    convexify_collision,
    extract_local_reference,
    initialize,
    make_baseline,
    mm_solve,
    solve_subproblem,
    tracking_cost,
)
from .qp import Infeasible, QPNumericalFailure
from .radio import (
    DistanceModel,
    EmptyZone,
    MultiZoneModel,
    OutsideAllZones,
    RadioMapGrid,
    WallSegment,
    eval_los,
    eval_multizone,
    fit_distance_model,
    fit_multizone,
    fit_zone,
    generate_radio_map,
    segment_zones,
)

__all__ = [
    "CommParams",
    "DomainViolation",
    "Sensor",
    "comm_utility",
    "spectral_efficiency",
    "snr",
    "surrogate",
    "surrogate_gradient",
    "Control",
    "Limits",
    "LinearizedDynamics",
    "check_limits",
    "linearize",
    "rollout",
    "step_nonlinear",
    "Circle",
    "ConvexPolytope",
    "DegenerateInput",
    "NotSeparable",
    "Pose",
    "contains",
    "polytope_distance",
    "polytope_from_vertices",
    "rectangle",
    "separating_hyperplane",
    "transform_polytope",
    "PlannerConfig",
    "PlanResult",
    "ReferenceWindow",
    "ReferenceInCollision",
    "comm_regularizer",
    "convexify_collision",
    "extract_local_reference",
    "initialize",
    "make_baseline",
    "mm_solve",
    "solve_subproblem",
    "tracking_cost",
    "Infeasible",
    "QPNumericalFailure",
    "DistanceModel",
    "EmptyZone",
    "MultiZoneModel",
    "OutsideAllZones",
    "RadioMapGrid",
    "WallSegment",
    "eval_los",
    "eval_multizone",
    "fit_distance_model",
    "fit_multizone",
    "fit_zone",
    "generate_radio_map",
    "segment_zones",
]

__version__ = "0.1.0"
