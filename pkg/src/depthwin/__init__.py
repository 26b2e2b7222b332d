"""Depth and camera-motion estimation over short frame windows by photometric
view synthesis, with the geometry, metrics, I/O and synthetic scenes needed to
check it end to end."""

from .errors import (
    DegenerateGeometryError,
    DegenerateOrientationError,
    DegenerateOverlapError,
    DepthwinError,
    EmptyTrajectoryError,
    FormatError,
    InvalidArgumentError,
    InvalidSceneError,
    UnsupportedFormatError,
)
from .geometry import FrameWindow, Intrinsics, build_pose_graph, compose, invert, pose_to_se3, poses_to_window, se3_to_pose
from .gradients import loss_and_gradients
from .losses import LossConfig, total_loss
from .metrics import ate_report, depth_metrics, median_scale
from .optim import OptimConfig, optimize_window
from .warp import bilinear_sample, project_pixels, reconstruct

__version__ = "0.1.0"

__all__ = [
    "DegenerateGeometryError",
    "DegenerateOrientationError",
    "DegenerateOverlapError",
    "DepthwinError",
    "EmptyTrajectoryError",
    "FormatError",
    "InvalidArgumentError",
    "InvalidSceneError",
    "UnsupportedFormatError",
    "FrameWindow",
    "Intrinsics",
    "build_pose_graph",
    "compose",
    "invert",
    "pose_to_se3",
    "poses_to_window",
    "se3_to_pose",
    "loss_and_gradients",
    "LossConfig",
    "total_loss",
    "ate_report",
    "depth_metrics",
    "median_scale",
    "OptimConfig",
    "optimize_window",
    "bilinear_sample",
    "project_pixels",
    "reconstruct",
]
