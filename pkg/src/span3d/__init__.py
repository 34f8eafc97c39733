"""Alignment losses for 7-DoF boxes, HTL loss scheduling and a box-fitting harness."""

from span3d.errors import (
    BehindCameraError,
    ConfigError,
    EmptyStatsError,
    InvalidArgumentError,
    NotReadyError,
    ParseError,
    Span3DError,
)
from span3d.geom3d import Box3D, CameraIntrinsics, corners_from_box, face_normals, project_points
from span3d.kernels import BACKEND
from span3d.losses import (
    AxisSource,
    LossBreakdown,
    Rect2D,
    depth_loss,
    giou_2d,
    mgiou_3d,
    projected_enclosing_rect,
    projection_alignment_loss,
    spatial_point_alignment_loss,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AxisSource",
    "BehindCameraError",
    "Box3D",
    "CameraIntrinsics",
    "ConfigError",
    "EmptyStatsError",
    "InvalidArgumentError",
    "LossBreakdown",
    "NotReadyError",
    "ParseError",
    "Rect2D",
    "Span3DError",
    "corners_from_box",
    "depth_loss",
    "face_normals",
    "giou_2d",
    "mgiou_3d",
    "project_points",
    "projected_enclosing_rect",
    "projection_alignment_loss",
    "spatial_point_alignment_loss",
    "total_loss",
]
