"""scikit-learn style wrappers around the corruption, skeleton and registration routines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corruption import CorruptionSpec, corrupt
from .geometry import PointCloud, RigidTransform, apply_transform
from .registration import (
    DEFAULT_INLIER_THRESHOLD,
    DEFAULT_TAU,
    estimate_transform,
    icp_baseline,
    inlier_ratio,
    register_srrf,
)
from .skeleton import SkeletonConfig, extract_skeleton, extract_skeleton_pair


def check_cloud(X, *, min_points: int = 1, name: str = "X") -> np.ndarray:
    """Validate a point set and return it as a float (n, 3) array."""
    pts = X.points if isinstance(X, PointCloud) else X
    try:
        pts = np.asarray(pts, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} is not numeric: {exc}") from None
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if len(pts) < min_points:
        raise ValueError(f"{name} needs at least {min_points} points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def check_is_fitted(estimator, attribute: str = "transform_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted; call fit first")


class Corruptor(BaseEstimator, TransformerMixin):
    """Apply one seeded corruption. Stateless: ``fit`` only validates parameters.

    ``transform`` returns a :class:`PointCloud` (with provenance labels) when given one,
    otherwise the corrupted coordinates as an array.
    """

    def __init__(self, kind: str = "gaussian", severity: int = 1, seed: int = 0):
        self.kind = kind
        self.severity = severity
        self.seed = seed

    def _spec(self) -> CorruptionSpec:
        return CorruptionSpec(self.kind, self.severity, self.seed)

    def fit(self, X=None, y=None):
        self._spec()
        return self

    def transform(self, X):
        cloud = X if isinstance(X, PointCloud) else PointCloud(check_cloud(X))
        out = corrupt(cloud, self._spec())
        return out if isinstance(X, PointCloud) else out.points


class SkeletonExtractor(BaseEstimator, TransformerMixin):
    """Skeleton extraction as a transformer.

    ``fit(X)`` fits a single skeleton; ``fit(X, Y)`` fits the source and target skeletons
    jointly with the coupling term. ``transform(X)`` returns skeleton points for ``X``
    using the fitted configuration.
    """

    def __init__(self, n_samples: int = 256, n_skeleton: int = 64, lambda1: float = 0.3,
                 lambda2: float = 0.4, lambda_ddl: float = 1.0, steps: int = 500,
                 step_size: float = 0.3, tol: float = 1e-6, seed: int = 0):
        self.n_samples = n_samples
        self.n_skeleton = n_skeleton
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda_ddl = lambda_ddl
        self.steps = steps
        self.step_size = step_size
        self.tol = tol
        self.seed = seed

    def config(self) -> SkeletonConfig:
        return SkeletonConfig(**self.get_params())

    def fit(self, X, y=None):
        cfg = self.config()
        X = check_cloud(X, min_points=cfg.n_samples)
        if y is None:
            self.skeleton_ = extract_skeleton(X, cfg)
            self.target_skeleton_ = None
            self.trace_ = None
        else:
            Y = check_cloud(y, min_points=cfg.n_samples, name="y")
            self.skeleton_, self.target_skeleton_, self.trace_ = extract_skeleton_pair(X, Y, cfg)
        return self

    def transform(self, X):
        check_is_fitted(self, "skeleton_")
        cfg = self.config()
        return extract_skeleton(check_cloud(X, min_points=cfg.n_samples), cfg).points

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).skeleton_.points


class _Registration(BaseEstimator, TransformerMixin):
    """Common behaviour: ``fit(source, target)`` stores ``transform_``."""

    def _estimate(self, X: np.ndarray, Y: np.ndarray) -> RigidTransform:
        raise NotImplementedError

    def fit(self, X, y):
        X = check_cloud(X)
        Y = check_cloud(y, name="y")
        self.transform_ = self._estimate(X, Y)
        self.rotation_ = self.transform_.rotation
        self.translation_ = self.transform_.translation
        return self

    def transform(self, X):
        check_is_fitted(self)
        if isinstance(X, PointCloud):
            return apply_transform(X, self.transform_)
        return self.transform_.apply(check_cloud(X))

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y, threshold: float = DEFAULT_INLIER_THRESHOLD) -> float:
        """Inlier ratio of the fitted transform on ``(X, y)``."""
        check_is_fitted(self)
        return inlier_ratio(check_cloud(X), check_cloud(y, name="y"), self.transform_, threshold)


class SoftRegistration(_Registration):
    """Soft feature matching on the raw clouds (no skeletons)."""

    def __init__(self, tau: float = DEFAULT_TAU, n_iters: int = 20, final_tau: float | None = None):
        self.tau = tau
        self.n_iters = n_iters
        self.final_tau = final_tau

    def _estimate(self, X, Y):
        tf, self.match_ = estimate_transform(X, Y, self.tau, n_iters=self.n_iters,
                                             final_tau=self.final_tau)
        return tf


class ICPRegistration(_Registration):
    """Point-to-point ICP baseline."""

    def __init__(self, max_iters: int = 50, tol: float = 1e-6):
        self.max_iters = max_iters
        self.tol = tol

    def _estimate(self, X, Y):
        return icp_baseline(X, Y, self.max_iters, self.tol)


class SkeletonRegistration(_Registration):
    """Raw-cloud and skeleton registration fused by inlier ratios.

    ``output`` selects which transform becomes ``transform_``: ``"fused"`` (default),
    ``"raw"`` or ``"skeleton"``. The full report is kept in ``report_``.
    """

    def __init__(self, tau: float = DEFAULT_TAU, inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
                 fusion: str = "quaternion", output: str = "fused",
                 skeleton: SkeletonConfig | None = None):
        self.tau = tau
        self.inlier_threshold = inlier_threshold
        self.fusion = fusion
        self.output = output
        self.skeleton = skeleton

    def _estimate(self, X, Y):
        if self.output not in ("fused", "raw", "skeleton"):
            raise ValueError(f"unknown output {self.output!r}")
        cfg = self.skeleton if self.skeleton is not None else SkeletonConfig()
        self.report_ = register_srrf(X, Y, cfg, self.tau, self.inlier_threshold, fusion=self.fusion)
        return {"fused": self.report_.tf_fused, "raw": self.report_.tf_corrupted,
                "skeleton": self.report_.tf_skeleton}[self.output]
