"""Point clouds, rigid transforms, spatial indexing and the closed-form rigid solver."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

ORTHO_TOL = 1e-9

LABEL_CLEAN = "clean"
LABEL_ADDED = "added"
LABEL_PERTURBED = "perturbed"


class GeometryError(ValueError):
    """Raised for degenerate or malformed geometric input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional per-point provenance labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("points contain non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.labels is not None:
            labels = np.array(self.labels, dtype=object)
            if labels.shape != (len(pts),):
                raise GeometryError("labels must have one entry per point")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def clean(cls, points) -> "PointCloud":
        points = np.asarray(points, dtype=float)
        return cls(points, np.full(len(points), LABEL_CLEAN, dtype=object))

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.labels)

    def label_counts(self) -> dict[str, int]:
        if self.labels is None:
            return {"unlabeled": len(self)}
        keys, counts = np.unique(self.labels.astype(str), return_counts=True)
        return {str(k): int(c) for k, c in zip(keys, counts)}


def as_points(cloud) -> np.ndarray:
    """Return an (n, 3) float array from a PointCloud or array-like."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"expected an (n, 3) array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation is not in SO(3)")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        return as_points(points) @ self.rotation.T + self.translation


def project_to_so3(M) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def apply_transform(cloud: PointCloud, tf: RigidTransform) -> PointCloud:
    return PointCloud(tf.apply(cloud.points), cloud.labels)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    R = np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
    return project_to_so3(R)


def random_rigid_transform(rng: np.random.Generator, max_angle_deg: float = 45.0,
                           max_translation: float = 0.5) -> RigidTransform:
    """Axis uniform on the sphere, angle uniform in [0, max], translation uniform in a cube."""
    axis = rng.normal(size=3)
    angle = np.deg2rad(rng.uniform(0.0, max_angle_deg))
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(rotation_about_axis(axis, angle), t)


@dataclass(frozen=True)
class Normalization:
    """Record of ``normalized = (points - offset) / scale``."""

    offset: np.ndarray
    scale: float

    def invert(self, points) -> np.ndarray:
        return as_points(points) * self.scale + self.offset


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, Normalization]:
    """Center at the centroid and scale so that the largest |coordinate| is 1."""
    pts = cloud.points
    if len(pts) == 0:
        raise GeometryError("empty cloud")
    offset = pts.mean(axis=0)
    centered = pts - offset
    scale = float(np.max(np.abs(centered)))
    if scale == 0.0:
        raise GeometryError("zero extent")
    return PointCloud(centered / scale, cloud.labels), Normalization(offset, scale)


def _deterministic_svd(H: np.ndarray):
    U, S, Vt = np.linalg.svd(H)
    # Fix column signs: largest-magnitude entry of each left singular vector is non-negative.
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(3)] < 0, -1.0, 1.0)
    return U * signs, S, (Vt.T * signs).T


def procrustes_solve(source, correspondence) -> RigidTransform:
    """Least-squares rigid transform mapping ``source[i]`` onto ``correspondence[i]``.

    Covariance ``H = sum (x - x̄)(y - ȳ)^T = U S V^T`` gives ``R = V U^T`` with the last
    column of V negated when that product would be a reflection, and ``t = ȳ - R x̄``.
    """
    X = as_points(source)
    Y = as_points(correspondence)
    if X.shape != Y.shape:
        raise GeometryError("source and correspondence must have the same shape")
    if len(X) < 3:
        raise GeometryError("rank-deficient covariance")
    x_bar = X.mean(axis=0)
    y_bar = Y.mean(axis=0)
    Xc = X - x_bar
    H = Xc.T @ (Y - y_bar)
    sx = np.linalg.svd(Xc, compute_uv=False)
    if sx[1] <= 1e-10 * max(sx[0], 1e-300):
        raise GeometryError("rank-deficient covariance")
    U, _, Vt = _deterministic_svd(H)
    V = Vt.T
    if np.linalg.det(V @ U.T) < 0:
        V[:, 2] *= -1.0
    R = V @ U.T
    t = y_bar - R @ x_bar
    return RigidTransform(R, t)


def alignment_error(source, correspondence, tf: RigidTransform) -> float:
    """Mean squared residual of ``tf`` over corresponded pairs."""
    r = tf.apply(source) - as_points(correspondence)
    return float(np.mean(np.sum(r * r, axis=1)))


class SpatialIndex:
    """Immutable k-d tree whose queries break distance ties by lowest point index."""

    def __init__(self, cloud):
        self._points = _frozen(as_points(cloud))
        if len(self._points) == 0:
            raise GeometryError("cannot index an empty cloud")
        self._tree = cKDTree(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self) -> int:
        return len(self._points)

    def query(self, queries, k: int = 1):
        """Return ``(distances, indices)`` of shape (m, k), ties resolved by index."""
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        n = len(self._points)
        if not 1 <= k <= n:
            raise GeometryError(f"k={k} outside [1, {n}]")
        kk = min(n, k + 1)
        dist, idx = self._tree.query(Q, k=kk)
        dist = dist.reshape(len(Q), kk)
        idx = idx.reshape(len(Q), kk)
        # Exact distances recomputed so equal geometric distances compare equal.
        diff = self._points[idx] - Q[:, None, :]
        dist = np.sqrt(np.einsum("mkd,mkd->mk", diff, diff))
        order = np.lexsort((idx, dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        if kk > k:
            # A tie straddling the k boundary may hide lower indices outside the query.
            tied = dist[:, k] == dist[:, k - 1]
            for row in np.flatnonzero(tied):
                dist[row, :k], idx[row, :k] = self._exact_row(Q[row], k)
        return dist[:, :k], idx[:, :k]

    def _exact_row(self, q, k):
        diff = self._points - q
        d = np.sqrt(np.einsum("nd,nd->n", diff, diff))
        order = np.lexsort((np.arange(len(d)), d))[:k]
        return d[order], order

    def nearest(self, queries):
        d, i = self.query(queries, k=1)
        return d[:, 0], i[:, 0]
