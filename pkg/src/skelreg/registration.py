"""Soft-correspondence rigid registration, transform fusion and an ICP baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (
    GeometryError,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    as_points,
    procrustes_solve,
    project_to_so3,
)
from .metrics import ErrorMetrics, transform_errors
from .skeleton import (
    DivergenceError,
    Skeleton,
    SkeletonConfig,
    extract_skeleton_pair,
    loss_registration,
)

log = logging.getLogger(__name__)

FEATURE_DIM = 10
FEATURE_K = 16
# Relative weights of the descriptor blocks before row normalisation:
# centred coordinates, centroid distance, covariance eigenvalues, shape ratios.
FEATURE_WEIGHTS = (1.0, 1.0, 1.0, 0.3)

DEFAULT_TAU = 0.02
DEFAULT_INLIER_THRESHOLD = 0.05


def local_eigenvalues(points, k: int = FEATURE_K) -> np.ndarray:
    """Descending eigenvalues of each point's k-NN covariance (neighbourhood includes the point)."""
    pts = as_points(points)
    _, idx = SpatialIndex(pts).query(pts, k=k)
    nb = pts[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb) / k
    return np.linalg.eigvalsh(cov)[:, ::-1]


def embed_features(cloud, k: int = FEATURE_K) -> np.ndarray:
    """Handcrafted per-point descriptor (rows L2-normalised), shape (n, 10).

    Columns: centred coordinates (3), distance to centroid (1), local covariance
    eigenvalues λ1 ≥ λ2 ≥ λ3 (3), linearity, planarity, sphericity (3).
    """
    pts = as_points(cloud)
    if len(pts) < k:
        raise GeometryError(f"need at least {k} points for the local descriptor, got {len(pts)}")
    return _descriptor(pts, local_eigenvalues(pts, k))


def _descriptor(pts: np.ndarray, ev: np.ndarray) -> np.ndarray:
    centred = pts - pts.mean(axis=0)
    radius = np.linalg.norm(centred, axis=1, keepdims=True)
    l1 = np.where(ev[:, :1] > 0, ev[:, :1], 1.0)
    shape = np.hstack([(ev[:, :1] - ev[:, 1:2]), (ev[:, 1:2] - ev[:, 2:3]), ev[:, 2:3]]) / l1
    wc, wr, we, ws = FEATURE_WEIGHTS
    F = np.hstack([wc * centred, wr * radius, we * ev, ws * shape])
    norm = np.linalg.norm(F, axis=1, keepdims=True)
    return F / np.where(norm > 0, norm, 1.0)


@dataclass(frozen=True, eq=False)
class SoftMatch:
    probabilities: np.ndarray
    temperature: float


def soft_match(phi_x, phi_y, tau: float = DEFAULT_TAU) -> SoftMatch:
    """Row i is ``softmax(phi_y @ phi_x[i] / tau)``."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    phi_x, phi_y = np.asarray(phi_x, dtype=float), np.asarray(phi_y, dtype=float)
    if phi_x.shape[1] != phi_y.shape[1]:
        raise GeometryError("feature dimensions differ")
    logits = phi_x @ phi_y.T / tau
    if not np.all(np.isfinite(logits)):
        raise GeometryError("non-finite similarity")
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return SoftMatch(P, float(tau))


def soft_correspondence(match: SoftMatch, target) -> np.ndarray:
    """Probability-weighted average of target points for each source point."""
    Y = as_points(target)
    if match.probabilities.shape[1] != len(Y):
        raise GeometryError("match columns do not match target size")
    return match.probabilities @ Y


def estimate_transform(source, target, tau: float = DEFAULT_TAU, *, n_iters: int = 20,
                       final_tau: float | None = None, init: RigidTransform | None = None):
    """Rigid transform from soft feature correspondences, refined iteratively.

    Each iteration embeds the currently aligned source, soft-matches it against the
    target embedding in both directions (source to target and target to source),
    stacks the two sets of matched pairs and solves one Procrustes problem, then
    composes the update. Matching both ways cancels most of the pull that kernel
    averaging exerts towards the interior of each cloud. The temperature anneals
    geometrically from ``tau`` to ``final_tau`` (default ``tau / 10``).
    Returns ``(transform, last_match)`` where the match is source to target.
    """
    X, Y = as_points(source), as_points(target)
    if len(X) < FEATURE_K or len(Y) < FEATURE_K:
        raise GeometryError(f"need at least {FEATURE_K} points for the local descriptor")
    final_tau = tau / 10.0 if final_tau is None else final_tau
    # local eigenvalues do not change under rigid motion, so compute them once
    ev_x = local_eigenvalues(X)
    phi_y = embed_features(Y)
    tf = RigidTransform.identity() if init is None else init
    match = None
    for t in np.geomspace(tau, final_tau, max(1, n_iters)):
        moved = tf.apply(X)
        phi_x = _descriptor(moved, ev_x)
        match = soft_match(phi_x, phi_y, t)
        back = soft_match(phi_y, phi_x, t)
        step = procrustes_solve(
            np.vstack([moved, soft_correspondence(back, moved)]),
            np.vstack([soft_correspondence(match, Y), Y]),
        )
        tf = step.compose(tf)
    return tf, match


def inlier_ratio(source, target, tf: RigidTransform, threshold: float = DEFAULT_INLIER_THRESHOLD) -> float:
    """Share of transformed source points with a target neighbour within ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    d, _ = SpatialIndex(as_points(target)).nearest(tf.apply(source))
    return float(np.mean(d <= threshold))


def average_quaternions(quats, weights) -> np.ndarray:
    """Weighted average of unit quaternions after aligning signs with the first one."""
    Q = np.array(quats, dtype=float)
    w = np.asarray(weights, dtype=float)
    ref = Q[np.argmax(w)]
    Q[Q @ ref < 0] *= -1.0
    q = w @ Q
    return q / np.linalg.norm(q)


def _quat(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_quat()


def fuse_transforms(tf_c: RigidTransform, tf_s: RigidTransform, gamma_c: float, gamma_s: float,
                    mode: str = "quaternion"):
    """Inlier-ratio-weighted blend of two transforms.

    ``lambda = gamma_c / (gamma_c + gamma_s)``; translations blend linearly and rotations
    by sign-aligned weighted quaternion averaging (``mode="quaternion"``) or by a linear
    matrix blend projected back onto SO(3) (``mode="svd"``). Returns
    ``(transform, lambda, fallback)``; when both ratios are zero the skeleton transform
    is returned with ``fallback=True``.
    """
    if gamma_c < 0 or gamma_s < 0:
        raise ValueError("inlier ratios must be non-negative")
    denom = gamma_c + gamma_s
    if denom <= 0:
        return tf_s, 0.0, True
    lam = gamma_c / denom
    if lam == 1.0:
        return tf_c, lam, False
    if lam == 0.0:
        return tf_s, lam, False
    t = lam * tf_c.translation + (1.0 - lam) * tf_s.translation
    if mode == "quaternion":
        q = average_quaternions([_quat(tf_c.rotation), _quat(tf_s.rotation)], [lam, 1.0 - lam])
        R = project_to_so3(Rotation.from_quat(q).as_matrix())
    elif mode == "svd":
        R = project_to_so3(lam * tf_c.rotation + (1.0 - lam) * tf_s.rotation)
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    return RigidTransform(R, t), lam, False


def _rms(d: np.ndarray) -> float:
    return float(np.sqrt(np.mean(d * d)))


def icp_baseline(source, target, max_iters: int = 50, tol: float = 1e-6, *,
                 return_history: bool = False):
    """Point-to-point ICP from the identity with Procrustes updates.

    The tracked error is the root-mean-square nearest-neighbour distance, which cannot
    increase between iterations (optimal step for fixed pairs, then re-matching).
    Stops when it improves by less than ``tol`` or after ``max_iters`` iterations and
    returns the best transform seen.
    """
    X = as_points(source)
    index = SpatialIndex(as_points(target))
    Y = index.points
    tf = RigidTransform.identity()
    best, best_err = tf, np.inf
    history = []
    for _ in range(max_iters):
        moved = tf.apply(X)
        d, idx = index.nearest(moved)
        err = _rms(d)
        history.append(err)
        if err < best_err:
            best, best_err = tf, err
        if len(history) > 1 and history[-2] - err < tol:
            break
        tf = procrustes_solve(moved, Y[idx]).compose(tf)
    else:
        err = _rms(index.nearest(tf.apply(X))[0])
        history.append(err)
        if err < best_err:
            best = tf
    return (best, history) if return_history else best


# ---------------------------------------------------------------------------
# Full pipeline


@dataclass(frozen=True, eq=False)
class RegistrationReport:
    tf_corrupted: RigidTransform
    tf_skeleton: RigidTransform
    tf_fused: RigidTransform
    gamma_c: float
    gamma_s: float
    lam: float
    flags: tuple = ()
    metrics: ErrorMetrics | None = None
    l_reg: float | None = None
    skeletons: tuple[Skeleton, Skeleton] | None = field(default=None, repr=False)

    def with_ground_truth(self, gt: RigidTransform) -> "RegistrationReport":
        rot, trans = transform_errors(self.tf_fused, gt)
        return RegistrationReport(
            self.tf_corrupted, self.tf_skeleton, self.tf_fused, self.gamma_c, self.gamma_s,
            self.lam, self.flags, ErrorMetrics.from_errors([rot], [trans]),
            loss_registration(self.tf_fused, gt), self.skeletons,
        )

    def to_json(self) -> dict:
        def tf_json(tf):
            return {"rotation": [float(f"{v:.12g}") for v in tf.rotation.ravel()],
                    "translation": [float(f"{v:.12g}") for v in tf.translation]}

        return {
            "tf_corrupted": tf_json(self.tf_corrupted),
            "tf_skeleton": tf_json(self.tf_skeleton),
            "tf_fused": tf_json(self.tf_fused),
            "gamma_c": self.gamma_c,
            "gamma_s": self.gamma_s,
            "lambda": self.lam,
            "flags": list(self.flags),
            "metrics": None if self.metrics is None else self.metrics.as_dict(),
            "l_reg": self.l_reg,
        }


def register_srrf(source, target, skel_cfg: SkeletonConfig = SkeletonConfig(),
                  tau: float = DEFAULT_TAU, inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
                  *, fusion: str = "quaternion", gt: RigidTransform | None = None) -> RegistrationReport:
    """Register two corrupted clouds via their raw points and their skeletons, then fuse."""
    X, Y = as_points(source), as_points(target)
    tf_c, _ = estimate_transform(X, Y, tau)
    gamma_c = inlier_ratio(X, Y, tf_c, inlier_threshold)
    flags = []
    try:
        # Skeletons are finished before skeleton registration starts; no gradient
        # from registration reaches the skeleton weights.
        sk_x, sk_y, _ = extract_skeleton_pair(X, Y, skel_cfg, alignment=tf_c)
        tf_s, _ = estimate_transform(sk_x.points, sk_y.points, tau, init=tf_c)
        gamma_s = inlier_ratio(sk_x.points, sk_y.points, tf_s, inlier_threshold)
        skeletons = (sk_x, sk_y)
    except (DivergenceError, GeometryError) as exc:
        log.warning("skeleton branch failed (%s); using raw-cloud estimate only", exc)
        flags.append("skeleton_failed")
        tf_s, gamma_s, skeletons = tf_c, 0.0, None
    if skeletons is None:
        tf, lam = tf_c, 1.0
    else:
        tf, lam, fallback = fuse_transforms(tf_c, tf_s, gamma_c, gamma_s, fusion)
        if fallback:
            flags.append("zero_inliers_skeleton_prior")
    report = RegistrationReport(tf_c, tf_s, tf, gamma_c, gamma_s, lam, tuple(flags), skeletons=skeletons)
    return report if gt is None else report.with_ground_truth(gt)
