"""Projective core: homographies, single-plane calibration and pose refinement."""

from .calibration import (
    decompose_homography,
    focal_from_homography,
    homography_from_pose,
    look_at,
    nearest_rotation,
    project,
)
from .homography import RansacConfig, estimate_homography_dlt, estimate_homography_ransac, transfer_errors
from .refine import PosePrior, RefineResult, refine_pose
from .types import PLAYER, Correspondences, Homography, Intrinsics, Pose

__all__ = [
    "PLAYER",
    "Correspondences",
    "Homography",
    "Intrinsics",
    "Pose",
    "PosePrior",
    "RansacConfig",
    "RefineResult",
    "decompose_homography",
    "estimate_homography_dlt",
    "estimate_homography_ransac",
    "focal_from_homography",
    "homography_from_pose",
    "look_at",
    "nearest_rotation",
    "project",
    "refine_pose",
    "transfer_errors",
]
