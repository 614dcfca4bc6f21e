"""Real-time magnetometer disturbance estimation by magnetic-vector restoration."""

from .core import (
    Euler,
    MagProjections,
    PreconditionError,
    euler_to_quat,
    gravity_from_quat,
    quat_align_sign,
    quat_from_acc_mag,
    quat_norm_closed_form,
    quat_to_euler,
    yaw_from_acc_mag,
)
from .estimator import (
    EstimateRecord,
    EstimatorConfig,
    SampleRecord,
    StreamEstimator,
    estimate_sample,
    estimate_stream,
    gate,
    zaru_hold,
)
from .geomag import (
    ConfigurationError,
    GaussCoefficients,
    GeoPosition,
    igrf_field_norm,
    legendre_assoc,
    mD_bounds_from_dip,
)
from .ipm import SolverConfig, SolverState, initialize_or_warm_start, k_bounds, kkt_step, solve
from .nlp import ProblemData, build_P, cost, null_space_dim
from .sim import DisturbanceProfile, NoiseModel, ScenarioConfig, complementary_filter, generate

__version__ = "0.1.0"

__all__ = [
    "Euler",
    "MagProjections",
    "PreconditionError",
    "euler_to_quat",
    "gravity_from_quat",
    "quat_align_sign",
    "quat_from_acc_mag",
    "quat_norm_closed_form",
    "quat_to_euler",
    "yaw_from_acc_mag",
    "EstimateRecord",
    "EstimatorConfig",
    "SampleRecord",
    "StreamEstimator",
    "estimate_sample",
    "estimate_stream",
    "gate",
    "zaru_hold",
    "ConfigurationError",
    "GaussCoefficients",
    "GeoPosition",
    "igrf_field_norm",
    "legendre_assoc",
    "mD_bounds_from_dip",
    "SolverConfig",
    "SolverState",
    "initialize_or_warm_start",
    "k_bounds",
    "kkt_step",
    "solve",
    "ProblemData",
    "build_P",
    "cost",
    "null_space_dim",
    "DisturbanceProfile",
    "NoiseModel",
    "ScenarioConfig",
    "complementary_filter",
    "generate",
]
