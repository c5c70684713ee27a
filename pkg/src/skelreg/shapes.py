"""Built-in synthetic shapes, sampled on their surfaces and normalized to the unit cube."""
from __future__ import annotations

import numpy as np

from .geometry import PointCloud, normalize_cloud


def _box_surface(rng, n, center, size):
    """Area-weighted uniform samples on the surface of an axis-aligned box."""
    size = np.asarray(size, dtype=float)
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]])
    face = rng.choice(3, size=n, p=areas / areas.sum())
    pts = rng.uniform(-0.5, 0.5, size=(n, 3))
    pts[np.arange(n), face] = rng.choice([-0.5, 0.5], size=n)
    return pts * size + np.asarray(center, dtype=float)


def _cylinder_surface(rng, n, center, radius, length, axis=0):
    theta = rng.uniform(0, 2 * np.pi, n)
    h = rng.uniform(-0.5, 0.5, n) * length
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    pts = np.insert(ring, axis, h, axis=1)
    return pts + np.asarray(center, dtype=float)


def _compose(rng, n, parts):
    """Split ``n`` points among parts proportionally to their weights."""
    weights = np.array([w for w, _ in parts], dtype=float)
    counts = rng.multinomial(n, weights / weights.sum())
    return np.concatenate([make(rng, c) for (_, make), c in zip(parts, counts)])


def sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def torus(rng, n, major=1.0, minor=0.35):
    # Rejection sampling gives area-uniform points.
    out = []
    while sum(len(o) for o in out) < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0, 1, 2 * n) < (major + minor * np.cos(v)) / (major + minor)
        u, v = u[keep], v[keep]
        out.append(np.stack([(major + minor * np.cos(v)) * np.cos(u),
                             (major + minor * np.cos(v)) * np.sin(u),
                             minor * np.sin(v)], axis=1))
    return np.concatenate(out)[:n]


def table(rng, n):
    """Rectangular top, four legs of unequal thickness and a crossbar on one side."""
    parts = [
        (6.0, lambda r, c: _box_surface(r, c, [0, 0, 0.5], [1.6, 0.9, 0.08])),
        (1.0, lambda r, c: _box_surface(r, c, [0.7, 0.35, 0.0], [0.08, 0.08, 0.92])),
        (1.0, lambda r, c: _box_surface(r, c, [-0.7, 0.35, 0.0], [0.08, 0.08, 0.92])),
        (1.0, lambda r, c: _box_surface(r, c, [0.7, -0.35, 0.0], [0.12, 0.12, 0.92])),
        (1.0, lambda r, c: _box_surface(r, c, [-0.7, -0.35, 0.0], [0.12, 0.12, 0.92])),
        (1.2, lambda r, c: _box_surface(r, c, [0.0, -0.35, -0.2], [1.4, 0.06, 0.06])),
    ]
    return _compose(rng, n, parts)


def airplane(rng, n):
    """Fuselage, swept main wings, horizontal tail and a vertical fin."""
    def wing(r, c, x0, span, chord, sweep, z):
        s = r.uniform(-1, 1, c)
        u = r.uniform(0, 1, c)
        x = x0 - sweep * np.abs(s) - chord * u
        y = s * span
        zz = z + r.choice([-0.01, 0.01], c)
        return np.stack([x, y, zz], axis=1)

    def fin(r, c):
        h = r.uniform(0, 1, c)
        u = r.uniform(0, 1, c)
        x = -0.85 - 0.2 * h - 0.25 * u
        return np.stack([x, r.choice([-0.01, 0.01], c), 0.08 + 0.4 * h], axis=1)

    parts = [
        (5.0, lambda r, c: _cylinder_surface(r, c, [0, 0, 0], 0.09, 2.0, axis=0)),
        (4.0, lambda r, c: wing(r, c, 0.25, 0.95, 0.35, 0.3, 0.0)),
        (1.2, lambda r, c: wing(r, c, -0.8, 0.35, 0.18, 0.12, 0.05)),
        (0.8, fin),
    ]
    return _compose(rng, n, parts)


SHAPES = {"sphere": sphere, "torus": torus, "table": table, "airplane": airplane}


def make_shape(name: str, n_points: int = 1024, seed: int = 0) -> PointCloud:
    """Sample a named synthetic shape and normalize it to the origin-centered unit cube."""
    try:
        fn = SHAPES[name]
    except KeyError:
        raise KeyError(f"unknown shape {name!r}; choose from {sorted(SHAPES)}") from None
    rng = np.random.default_rng(seed)
    pts = fn(rng, n_points)
    cloud, _ = normalize_cloud(PointCloud.clean(pts))
    return cloud
