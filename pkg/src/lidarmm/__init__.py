"""Calibration, synchronization, and accuracy-evaluation toolkit for
lidar-phone mobile mapping data."""

from .core import (Pose, Rotation, Trajectory, interpolate_pose, slerp,
                   so3_exp, so3_log)
from .errors import (AlgorithmError, DataError, DegenerateMotionError,
                     InsufficientDataError, LowConfidenceError, NoOverlapError,
                     OrderingError, RangeError, ToolkitError)

__all__ = [
    "Pose", "Rotation", "Trajectory", "interpolate_pose", "slerp",
    "so3_exp", "so3_log",
    "ToolkitError", "DataError", "OrderingError", "InsufficientDataError",
    "RangeError", "NoOverlapError", "AlgorithmError", "DegenerateMotionError",
    "LowConfidenceError",
]

__version__ = "0.1.0"
