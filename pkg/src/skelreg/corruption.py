"""Seeded corruption generators: density, noise and transformation perturbations.

Every generator is a pure function of ``(cloud, severity, seed)``. Random draws are
sized for the largest severity and then truncated or scaled, so for a fixed seed a
higher severity extends (never reshuffles) the corruption of a lower one.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from math import comb

import numpy as np

from .geometry import (
    LABEL_ADDED,
    LABEL_CLEAN,
    LABEL_PERTURBED,
    GeometryError,
    PointCloud,
    SpatialIndex,
)

KINDS = (
    "density_inc", "density_dec", "cutout",
    "uniform", "gaussian", "impulse", "upsampling", "background",
    "shear", "distortion", "distortion_rbf", "distortion_rbf_inv",
)
SEVERITIES = (1, 2, 3, 4, 5)

K_DENSITY_INC = 32
K_DENSITY_DEC = 64
K_CUTOUT = 64
JITTER_DENSITY_INC = 0.01
IMPULSE_LINF = 0.05
UPSAMPLING_LINF = 0.08
LATTICE_SIZE = 5

SEVERITY_TABLE = {
    "density_inc": {"clusters": (1, 2, 3, 4, 5)},
    "density_dec": {"clusters": (1, 2, 3, 4, 5), "fraction": (0.5, 0.55, 0.6, 0.7, 0.75)},
    "cutout": {"clusters": (1, 2, 3, 4, 5)},
    "uniform": {"bound": (0.01, 0.02, 0.03, 0.04, 0.05)},
    "gaussian": {"sigma": (0.01, 0.015, 0.02, 0.025, 0.03)},
    "impulse": {"fraction": (0.01, 0.02, 0.03, 0.04, 0.05)},
    "upsampling": {"fraction": (0.05, 0.10, 0.15, 0.20, 0.25)},
    "background": {"fraction": (0.02, 0.04, 0.06, 0.08, 0.10)},
    "shear": {"max_shear": (0.05, 0.10, 0.15, 0.20, 0.25)},
    "distortion": {"max_displacement": (0.05, 0.10, 0.15, 0.20, 0.25)},
    "distortion_rbf": {"displacement": (0.02, 0.04, 0.06, 0.08, 0.10)},
    "distortion_rbf_inv": {"displacement": (0.02, 0.04, 0.06, 0.08, 0.10)},
}

# Shrinks bounded draws by one part in 1e12 so that the realised displacement
# fl(p + d) - p still respects the bound after rounding.
_BOUND_SAFETY = 1.0 - 1e-12


class CorruptionError(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorruptionError(f"unknown corruption kind {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise CorruptionError(f"severity must be in 1..5, got {self.severity}")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(str(d["kind"]), int(d["severity"]), int(d.get("seed", 0)))


def param(kind: str, name: str, severity: int):
    return SEVERITY_TABLE[kind][name][severity - 1]


# ---------------------------------------------------------------------------
# Seed derivation

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *parts) -> int:
    """Fold ``parts`` into ``master`` with splitmix64; strings fold in byte by byte."""
    h = splitmix64(int(master) & _MASK64)
    for part in parts:
        if isinstance(part, str):
            for b in part.encode():
                h = splitmix64(h ^ b)
            h = splitmix64(h ^ 0xFF)
        else:
            h = splitmix64(h ^ (int(part) & _MASK64))
    return h


# ---------------------------------------------------------------------------
# Helpers


def _labels(cloud: PointCloud) -> np.ndarray:
    if cloud.labels is None:
        return np.full(len(cloud), LABEL_CLEAN, dtype=object)
    return np.array(cloud.labels, dtype=object)


def _mark_perturbed(labels: np.ndarray, idx) -> np.ndarray:
    labels = labels.copy()
    sel = labels[idx]
    labels[idx] = np.where(sel == LABEL_ADDED, LABEL_ADDED, LABEL_PERTURBED)
    return labels


def _append(cloud: PointCloud, new_points: np.ndarray) -> PointCloud:
    pts = np.vstack([cloud.points, new_points])
    labels = np.concatenate([_labels(cloud), np.full(len(new_points), LABEL_ADDED, dtype=object)])
    return PointCloud(pts, labels)


def _keep(cloud: PointCloud, keep_mask: np.ndarray) -> PointCloud:
    if keep_mask.sum() < 3:
        raise CorruptionError("corruption would leave fewer than 3 points")
    return PointCloud(cloud.points[keep_mask], _labels(cloud)[keep_mask])


def _bounded_uniform(rng, bound: float, size) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size) * (bound * _BOUND_SAFETY)


def _anchor_neighbourhoods(cloud: PointCloud, rng, clusters: int, k: int) -> np.ndarray:
    """k-NN index sets around the first ``clusters`` anchors of a seeded permutation."""
    n = len(cloud)
    if n < k:
        raise CorruptionError(f"cloud has {n} points, fewer than k={k}")
    order = rng.permutation(n)
    anchors = order[:clusters]
    _, idx = SpatialIndex(cloud.points).query(cloud.points[anchors], k=k)
    return idx


def _count(n: int, fraction: float) -> int:
    return int(np.floor(n * fraction + 1e-9))


# ---------------------------------------------------------------------------
# Density


def density_inc(cloud: PointCloud, severity: int, seed, *, clusters: int | None = None) -> PointCloud:
    """Duplicate each point of ``c`` random 32-NN clusters with a small uniform jitter."""
    c = param("density_inc", "clusters", severity) if clusters is None else clusters
    rng = np.random.default_rng(seed)
    c_max = max(SEVERITY_TABLE["density_inc"]["clusters"][-1], c)
    nbrs = _anchor_neighbourhoods(cloud, rng, c_max, K_DENSITY_INC)[:c]
    jitter = _bounded_uniform(rng, JITTER_DENSITY_INC, (c_max, K_DENSITY_INC, 3))[:c]
    added = cloud.points[nbrs] + jitter
    return _append(cloud, added.reshape(-1, 3))


def density_dec_removed(cloud: PointCloud, severity: int, seed, *, clusters: int | None = None,
                        fraction: float | None = None) -> np.ndarray:
    """Boolean mask of points removed by :func:`density_dec`."""
    c = param("density_dec", "clusters", severity) if clusters is None else clusters
    p = param("density_dec", "fraction", severity) if fraction is None else fraction
    rng = np.random.default_rng(seed)
    c_max = max(SEVERITY_TABLE["density_dec"]["clusters"][-1], c)
    nbrs = _anchor_neighbourhoods(cloud, rng, c_max, K_DENSITY_DEC)[:c]
    priority = rng.random(len(cloud))
    n_remove = int(round(p * K_DENSITY_DEC))
    removed = np.zeros(len(cloud), dtype=bool)
    for hood in nbrs:
        # highest-priority points of the neighbourhood go first; nested across fractions
        ranked = hood[np.argsort(-priority[hood], kind="stable")]
        removed[ranked[:n_remove]] = True
    return removed


def density_dec(cloud: PointCloud, severity: int, seed, **overrides) -> PointCloud:
    """Remove a fraction of the points inside ``c`` random 64-NN neighbourhoods."""
    return _keep(cloud, ~density_dec_removed(cloud, severity, seed, **overrides))


def cutout(cloud: PointCloud, severity: int, seed, *, clusters: int | None = None) -> PointCloud:
    """Discard ``c`` whole 64-NN clusters around random anchors."""
    c = param("cutout", "clusters", severity) if clusters is None else clusters
    rng = np.random.default_rng(seed)
    c_max = max(SEVERITY_TABLE["cutout"]["clusters"][-1], c)
    nbrs = _anchor_neighbourhoods(cloud, rng, c_max, K_CUTOUT)[:c]
    keep = np.ones(len(cloud), dtype=bool)
    keep[nbrs.ravel()] = False
    return _keep(cloud, keep)


# ---------------------------------------------------------------------------
# Noise


def noise_gaussian(cloud: PointCloud, severity: int, seed, *, sigma: float | None = None) -> PointCloud:
    s = param("gaussian", "sigma", severity) if sigma is None else sigma
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((len(cloud), 3)) * s
    pts = np.clip(cloud.points + noise, -1.0, 1.0)
    return PointCloud(pts, _mark_perturbed(_labels(cloud), slice(None)))


def noise_uniform(cloud: PointCloud, severity: int, seed, *, bound: float | None = None) -> PointCloud:
    b = param("uniform", "bound", severity) if bound is None else bound
    rng = np.random.default_rng(seed)
    pts = np.clip(cloud.points + _bounded_uniform(rng, b, (len(cloud), 3)), -1.0, 1.0)
    return PointCloud(pts, _mark_perturbed(_labels(cloud), slice(None)))


def impulse_selection(n: int, severity: int, seed):
    """Indices of impulse-perturbed points and their offsets (rows aligned)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    offsets = _bounded_uniform(rng, IMPULSE_LINF, (n, 3))
    k = _count(n, param("impulse", "fraction", severity))
    return order[:k], offsets[:k]


def noise_impulse(cloud: PointCloud, severity: int, seed) -> PointCloud:
    """Displace a severity-dependent share of points by up to 0.05 per coordinate."""
    idx, offsets = impulse_selection(len(cloud), severity, seed)
    pts = np.array(cloud.points)
    pts[idx] += offsets
    return PointCloud(pts, _mark_perturbed(_labels(cloud), idx))


def noise_upsampling(cloud: PointCloud, severity: int, seed) -> PointCloud:
    """Insert one new point within ℓ∞ 0.08 of each of a severity-dependent set of anchors."""
    n = len(cloud)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    offsets = _bounded_uniform(rng, UPSAMPLING_LINF, (n, 3))
    k = _count(n, param("upsampling", "fraction", severity))
    return _append(cloud, cloud.points[order[:k]] + offsets[:k])


def noise_background(cloud: PointCloud, severity: int, seed) -> PointCloud:
    """Add points uniformly distributed in the cloud's axis-aligned bounding box."""
    n = len(cloud)
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    rng = np.random.default_rng(seed)
    k_max = _count(n, SEVERITY_TABLE["background"]["fraction"][-1])
    u = rng.random((k_max, 3))
    k = _count(n, param("background", "fraction", severity))
    added = np.clip(lo + (hi - lo) * u[:k], lo, hi)
    return _append(cloud, added)


# ---------------------------------------------------------------------------
# Transformations


def shear_coefficients(severity: int, seed) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    mag = rng.uniform(0.5, 1.0, 2)
    sign = rng.choice([-1.0, 1.0], 2)
    s = param("shear", "max_shear", severity)
    a, b = s * mag * sign
    return float(a), float(b)


def apply_shear(points: np.ndarray, a: float, b: float, axis: int = 2) -> np.ndarray:
    """Shear the two coordinates other than ``axis`` in proportion to ``axis``."""
    pts = np.array(points, dtype=float)
    others = [i for i in range(3) if i != axis]
    pts[:, others[0]] += a * points[:, axis]
    pts[:, others[1]] += b * points[:, axis]
    return pts


def transform_shear(cloud: PointCloud, severity: int, seed, *,
                    coefficients: tuple[float, float] | None = None, axis: int = 2) -> PointCloud:
    a, b = shear_coefficients(severity, seed) if coefficients is None else coefficients
    return PointCloud(apply_shear(cloud.points, a, b, axis), _mark_perturbed(_labels(cloud), slice(None)))


def _bbox(points: np.ndarray):
    lo, hi = points.min(axis=0), points.max(axis=0)
    extent = np.where(hi - lo > 0, hi - lo, 1.0)
    return lo, extent


def _bernstein(u: np.ndarray, degree: int) -> np.ndarray:
    """(len(u), degree+1) Bernstein basis values."""
    i = np.arange(degree + 1)
    binom = np.array([comb(degree, k) for k in i], dtype=float)
    u = np.asarray(u, dtype=float)[:, None]
    return binom * u**i * (1.0 - u) ** (degree - i)


def _unit_ball(rng, size) -> np.ndarray:
    v = rng.standard_normal((size, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.random(size)[:, None] ** (1.0 / 3.0)


@dataclass(frozen=True)
class FFDLattice:
    lo: np.ndarray
    extent: np.ndarray
    control: np.ndarray  # (5, 5, 5, 3) control-point displacements

    def displacement(self, points) -> np.ndarray:
        deg = self.control.shape[0] - 1
        u = (np.asarray(points, dtype=float) - self.lo) / self.extent
        bx, by, bz = (_bernstein(u[:, a], deg) for a in range(3))
        return np.einsum("ni,nj,nk,ijkd->nd", bx, by, bz, self.control)

    def lipschitz_bound(self) -> float:
        """Upper bound on the Lipschitz constant of ``p -> p + displacement(p)``."""
        deg = self.control.shape[0] - 1
        per_axis = []
        for a in range(3):
            diffs = np.diff(self.control, axis=a)
            per_axis.append(deg * np.max(np.linalg.norm(diffs, axis=-1)) / self.extent[a])
        return 1.0 + float(np.sqrt(np.sum(np.square(per_axis))))


def distortion_lattice(cloud: PointCloud, severity: int, seed, *,
                       max_displacement: float | None = None) -> FFDLattice:
    g = param("distortion", "max_displacement", severity) if max_displacement is None else max_displacement
    rng = np.random.default_rng(seed)
    lo, extent = _bbox(cloud.points)
    control = _unit_ball(rng, LATTICE_SIZE**3) * g
    return FFDLattice(lo, extent, control.reshape(LATTICE_SIZE, LATTICE_SIZE, LATTICE_SIZE, 3))


def transform_distortion(cloud: PointCloud, severity: int, seed, **overrides) -> PointCloud:
    """Free-form deformation with Bernstein blending of randomly displaced lattice points."""
    lattice = distortion_lattice(cloud, severity, seed, **overrides)
    pts = cloud.points + lattice.displacement(cloud.points)
    return PointCloud(pts, _mark_perturbed(_labels(cloud), slice(None)))


def multiquadric(r, shape):
    return np.sqrt(np.square(r) + shape**2)


def inverse_multiquadric(r, shape):
    return 1.0 / np.sqrt(np.square(r) + shape**2)


@dataclass(frozen=True)
class RBFField:
    centers: np.ndarray
    weights: np.ndarray
    displacements: np.ndarray
    shape: float
    inverse: bool

    def kernel(self, r):
        return inverse_multiquadric(r, self.shape) if self.inverse else multiquadric(r, self.shape)

    def __call__(self, points) -> np.ndarray:
        r = np.linalg.norm(np.asarray(points, dtype=float)[:, None, :] - self.centers[None], axis=2)
        return self.kernel(r) @ self.weights


def rbf_field(cloud: PointCloud, severity: int, seed, inverse: bool = False, *,
              displacement: float | None = None) -> RBFField:
    """Interpolating (inverse) multi-quadric field through 125 displaced grid controls."""
    kind = "distortion_rbf_inv" if inverse else "distortion_rbf"
    d = param(kind, "displacement", severity) if displacement is None else displacement
    pts = cloud.points
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    side = float(np.max(pts.max(axis=0) - pts.min(axis=0))) or 1.0
    ticks = np.linspace(-0.5, 0.5, LATTICE_SIZE) * side
    gx, gy, gz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1) + center
    shape = side / (LATTICE_SIZE - 1)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((len(centers), 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    disp = dirs * d
    r = np.linalg.norm(centers[:, None, :] - centers[None], axis=2)
    phi = inverse_multiquadric(r, shape) if inverse else multiquadric(r, shape)
    weights = None
    for ridge in (0.0, 1e-10):
        try:
            w = np.linalg.solve(phi + ridge * np.eye(len(phi)), disp)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(w)) and np.max(np.abs(phi @ w - disp), initial=0.0) <= 1e-8:
            weights = w
            break
    if weights is None:
        raise CorruptionError("RBF system singular")
    return RBFField(centers, weights, disp, shape, inverse)


def transform_distortion_rbf(cloud: PointCloud, severity: int, seed, inverse: bool = False,
                             **overrides) -> PointCloud:
    field = rbf_field(cloud, severity, seed, inverse, **overrides)
    pts = cloud.points + field(cloud.points)
    return PointCloud(pts, _mark_perturbed(_labels(cloud), slice(None)))


# ---------------------------------------------------------------------------

GENERATORS = {
    "density_inc": density_inc,
    "density_dec": density_dec,
    "cutout": cutout,
    "uniform": noise_uniform,
    "gaussian": noise_gaussian,
    "impulse": noise_impulse,
    "upsampling": noise_upsampling,
    "background": noise_background,
    "shear": transform_shear,
    "distortion": transform_distortion,
    "distortion_rbf": lambda c, s, seed: transform_distortion_rbf(c, s, seed, inverse=False),
    "distortion_rbf_inv": lambda c, s, seed: transform_distortion_rbf(c, s, seed, inverse=True),
}


def corrupt(cloud: PointCloud, spec: CorruptionSpec) -> PointCloud:
    """Apply the corruption described by ``spec``; deterministic in (cloud, spec)."""
    if spec.kind not in GENERATORS:
        raise CorruptionError(f"unknown corruption kind {spec.kind!r}")
    if len(cloud) == 0:
        raise GeometryError("empty cloud")
    return GENERATORS[spec.kind](cloud, spec.severity, spec.seed)
