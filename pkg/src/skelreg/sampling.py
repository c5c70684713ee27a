"""Random and farthest-point downsampling."""
from __future__ import annotations

import numpy as np

from .geometry import GeometryError, PointCloud, as_points


def _check_k(cloud: PointCloud, k: int) -> None:
    if not 1 <= k <= len(cloud):
        raise GeometryError(f"k={k} outside [1, {len(cloud)}]")


def _subset(cloud: PointCloud, idx: np.ndarray) -> PointCloud:
    labels = None if cloud.labels is None else cloud.labels[idx]
    return PointCloud(cloud.points[idx], labels)


def rds_indices(cloud: PointCloud, k: int, seed) -> np.ndarray:
    _check_k(cloud, k)
    rng = np.random.default_rng(seed)
    return rng.choice(len(cloud), size=k, replace=False)


def rds_sample(cloud: PointCloud, k: int, seed) -> PointCloud:
    """Uniform sample of ``k`` points without replacement."""
    return _subset(cloud, rds_indices(cloud, k, seed))


def fps_indices(cloud: PointCloud, k: int, seed=None, start: int | None = None) -> np.ndarray:
    """Greedy farthest-point selection; the first index is drawn from ``seed`` unless given."""
    _check_k(cloud, k)
    pts = as_points(cloud)
    n = len(pts)
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = start
    d2 = np.sum((pts - pts[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))  # argmax returns the lowest index on ties
        chosen[i] = nxt
        np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1), out=d2)
    return chosen


def fps_sample(cloud: PointCloud, k: int, seed=None, start: int | None = None) -> PointCloud:
    return _subset(cloud, fps_indices(cloud, k, seed, start))
