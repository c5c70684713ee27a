"""Set distances between point sets and registration error metrics."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .geometry import GeometryError, RigidTransform, SpatialIndex, as_points

CHAMFER_SCALE = 1e-4
GIMBAL_TOL = 1e-6


def _nn_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point of ``a`` to its nearest point in ``b``."""
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("empty point set")
    if len(a) * len(b) <= 250_000:
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return SpatialIndex(b).nearest(a)[0]


def chamfer_distance(s1, s2) -> float:
    """Squared-norm bidirectional chamfer distance with a 1e-4 reporting prefactor."""
    a, b = as_points(s1), as_points(s2)
    d_ab = _nn_distances(a, b)
    d_ba = _nn_distances(b, a)
    return CHAMFER_SCALE * (float(np.sum(d_ab**2)) + float(np.sum(d_ba**2)))


def l_ddl(s1, s2) -> float:
    """Unsquared bidirectional nearest-neighbour distance sum."""
    a, b = as_points(s1), as_points(s2)
    return float(np.sum(_nn_distances(a, b))) + float(np.sum(_nn_distances(b, a)))


def euler_zyx(R) -> tuple[np.ndarray, bool]:
    """Intrinsic z-y-x angles (yaw, pitch, roll) in radians with ``R = Rz Ry Rx``.

    The flag is set when the pitch is within ``GIMBAL_TOL`` of ±90°, where yaw and roll
    are not separately identifiable (roll is then reported as 0).
    """
    R = np.asarray(R, dtype=float)
    sp = float(np.clip(-R[2, 0], -1.0, 1.0))
    pitch = np.arcsin(sp)
    gimbal = abs(abs(pitch) - np.pi / 2) < GIMBAL_TOL
    if gimbal:
        yaw = np.arctan2(-R[0, 1], R[1, 1])
        roll = 0.0
    else:
        yaw = np.arctan2(R[1, 0], R[0, 0])
        roll = np.arctan2(R[2, 1], R[2, 2])
    return np.array([yaw, pitch, roll]), bool(gimbal)


@dataclass(frozen=True)
class RotationError:
    degrees: np.ndarray
    gimbal_lock: bool = False


def rotation_error_degrees(estimated: RigidTransform, ground_truth: RigidTransform) -> RotationError:
    """Per-axis (z, y, x) Euler-angle error of the relative rotation ``R_est R_gt^T``.

    Using the relative rotation makes the error invariant to right-composition of both
    inputs with a common rotation; each entry lies in [0, 180].
    """
    rel = estimated.rotation @ ground_truth.rotation.T
    angles, gimbal = euler_zyx(rel)
    deg = np.abs(np.degrees(angles))
    deg = np.minimum(deg, 360.0 - deg)
    return RotationError(deg, gimbal)


@dataclass(frozen=True)
class ErrorMetrics:
    mse_r: float
    rmse_r: float
    mae_r: float
    mse_t: float
    rmse_t: float
    mae_t: float

    @classmethod
    def from_errors(cls, rot_errors_deg, trans_errors) -> "ErrorMetrics":
        """Aggregate per-axis rotation errors (degrees) and per-component translation errors."""
        r = np.abs(np.asarray(rot_errors_deg, dtype=float)).ravel()
        t = np.abs(np.asarray(trans_errors, dtype=float)).ravel()
        mse_r = float(np.mean(r**2))
        mse_t = float(np.mean(t**2))
        return cls(mse_r, float(np.sqrt(mse_r)), float(np.mean(r)),
                   mse_t, float(np.sqrt(mse_t)), float(np.mean(t)))

    def as_dict(self) -> dict:
        return asdict(self)


def transform_errors(estimated: RigidTransform, ground_truth: RigidTransform):
    """Per-axis rotation errors in degrees and per-component translation errors."""
    rot = rotation_error_degrees(estimated, ground_truth).degrees
    trans = np.abs(estimated.translation - ground_truth.translation)
    return rot, trans


def error_metrics(estimates, ground_truths) -> ErrorMetrics:
    rots, trans = [], []
    for est, gt in zip(estimates, ground_truths):
        r, t = transform_errors(est, gt)
        rots.append(r)
        trans.append(t)
    if not rots:
        raise ValueError("no transforms to evaluate")
    return ErrorMetrics.from_errors(rots, trans)
