"""Nonlinear reward fusion for whole-body loco-manipulation at desk scale."""

from rewardfusion.geometry import (
    Pose,
    Rotation,
    Se3Weights,
    express_in_body,
    position_distance,
    rotation_about_axis,
    rotation_angle_distance,
    se3_error,
    vectorize_pose,
)
from rewardfusion.reward_fusion import (
    EpisodeRewardState,
    FusionConfig,
    FusionMode,
    RewardTerms,
)

__version__ = "0.1.0"

__all__ = [
    "EpisodeRewardState",
    "FusionConfig",
    "FusionMode",
    "Pose",
    "RewardTerms",
    "Rotation",
    "Se3Weights",
    "express_in_body",
    "position_distance",
    "rotation_about_axis",
    "rotation_angle_distance",
    "se3_error",
    "vectorize_pose",
]
