from .arm import ArmModel, forward_kinematics, gripper_velocity
from .ballistics import ballistic_landing, flight_time
from .domains import (
    FAILURE_REASONS,
    LEVER,
    THROW,
    Domain,
    DomainConfig,
    Evaluation,
    GapConfig,
    decode,
    eval_lever,
    eval_throw,
)
from .trajectory import CubicTrajectory, cubic_coefficients

__all__ = [
    "ArmModel", "forward_kinematics", "gripper_velocity", "ballistic_landing", "flight_time",
    "FAILURE_REASONS", "LEVER", "THROW", "Domain", "DomainConfig", "Evaluation", "GapConfig",
    "decode", "eval_lever", "eval_throw", "CubicTrajectory", "cubic_coefficients",
]
