"""Robust rigid registration of corrupted point clouds assisted by learning-free skeletons."""
from .corruption import KINDS, CorruptionSpec, corrupt
from .estimators import (
    Corruptor,
    ICPRegistration,
    SkeletonExtractor,
    SkeletonRegistration,
    SoftRegistration,
    check_cloud,
)
from .geometry import PointCloud, RigidTransform, apply_transform, normalize_cloud, procrustes_solve
from .metrics import ErrorMetrics, chamfer_distance, l_ddl, rotation_error_degrees
from .registration import (
    RegistrationReport,
    estimate_transform,
    fuse_transforms,
    icp_baseline,
    inlier_ratio,
    register_srrf,
)
from .skeleton import Skeleton, SkeletonConfig, extract_skeleton, extract_skeleton_pair

__all__ = [
    "KINDS", "CorruptionSpec", "corrupt",
    "Corruptor", "ICPRegistration", "SkeletonExtractor", "SkeletonRegistration", "SoftRegistration",
    "check_cloud",
    "PointCloud", "RigidTransform", "apply_transform", "normalize_cloud", "procrustes_solve",
    "ErrorMetrics", "chamfer_distance", "l_ddl", "rotation_error_degrees",
    "RegistrationReport", "estimate_transform", "fuse_transforms", "icp_baseline", "inlier_ratio",
    "register_srrf",
    "Skeleton", "SkeletonConfig", "extract_skeleton", "extract_skeleton_pair",
]
