"""Skeleton extraction by direct optimisation of convex-combination weights.

Each skeleton point is a convex combination of FPS-sampled input points. The weight
matrix is parameterised by logits passed through a per-column softmax, so the simplex
constraint holds at every step. Radii are a weighted sum of each sample's distance to
the nearest skeleton point. Source and target skeletons are fitted jointly, coupled by
a bidirectional nearest-neighbour distance between them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import GeometryError, PointCloud, RigidTransform, as_points
from .sampling import fps_indices

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-6
SOFTMIN_TEMPERATURE = 0.01
INIT_TEMPERATURE = 0.1
MAX_HALVINGS = 10
PATIENCE = 20
_EPS = 1e-12

# Four antipodal pairs along the cube diagonals: a fixed, symmetric sphere-surface pattern.
SURFACE_DIRECTIONS = np.array(
    [[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=float
) / np.sqrt(3.0)


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"diverged at step {step}")
        self.step = step


@dataclass(frozen=True)
class SkeletonConfig:
    n_samples: int = 256
    n_skeleton: int = 64
    lambda1: float = 0.3
    lambda2: float = 0.4
    lambda_ddl: float = 1.0
    steps: int = 500
    step_size: float = 0.3
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_skeleton <= self.n_samples:
            raise ValueError("need 1 <= n_skeleton <= n_samples")
        if min(self.lambda1, self.lambda2, self.lambda_ddl, self.step_size) < 0:
            raise ValueError("loss weights and step size must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Skeleton:
    points: np.ndarray
    radii: np.ndarray
    weights: np.ndarray
    samples: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def to_cloud(self) -> PointCloud:
        return PointCloud(self.points)

    def to_json(self, config: SkeletonConfig | None = None) -> dict:
        return {
            "points": self.points.tolist(),
            "radii": self.radii.tolist(),
            "n_samples": int(len(self.samples)),
            "config": None if config is None else config.as_dict(),
        }


def check_simplex(weights, tol: float = SIMPLEX_TOL) -> None:
    W = np.asarray(weights, dtype=float)
    if np.any(W < -tol) or np.max(np.abs(W.sum(axis=0) - 1.0)) > tol:
        raise GeometryError("weight columns are not on the probability simplex")


def skeleton_points(weights, samples) -> np.ndarray:
    """Skeleton points ``W^T X*`` for simplex-constrained weight columns."""
    check_simplex(weights)
    return np.asarray(weights, dtype=float).T @ as_points(samples)


def nearest_skeleton_distance(sample, skeleton) -> float:
    S = np.atleast_2d(np.asarray(skeleton, dtype=float))
    if len(S) == 0:
        raise GeometryError("empty skeleton")
    return float(np.sqrt(np.min(np.sum((S - np.asarray(sample, dtype=float)) ** 2, axis=1))))


def nearest_distances(samples, skeleton) -> np.ndarray:
    """Hard nearest-skeleton distance for every sample (the vector D)."""
    X, S = as_points(samples), np.asarray(skeleton, dtype=float)
    d2 = np.sum((X[:, None, :] - S[None, :, :]) ** 2, axis=2)
    return np.sqrt(np.min(d2, axis=1))


def skeleton_radii(weights, distances) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    D = np.asarray(distances, dtype=float).reshape(-1)
    if W.shape[0] != D.shape[0]:
        raise GeometryError("weights and distances disagree in sample count")
    return W.T @ D


def column_softmax(Z: np.ndarray) -> np.ndarray:
    E = np.exp(Z - Z.max(axis=0, keepdims=True))
    return E / E.sum(axis=0, keepdims=True)


def sphere_surface_points(centers, radii) -> np.ndarray:
    """(m * 8, 3) points on each skeletal sphere, sphere-major order."""
    C = np.asarray(centers, dtype=float)
    R = np.asarray(radii, dtype=float)
    return (C[:, None, :] + R[:, None, None] * SURFACE_DIRECTIONS[None]).reshape(-1, 3)


def loss_registration(estimated: RigidTransform, gt: RigidTransform) -> float:
    """``||R^T R_gt - I||_F^2 + ||t - t_gt||^2``."""
    M = estimated.rotation.T @ gt.rotation - np.eye(3)
    d = estimated.translation - gt.translation
    return float(np.sum(M * M) + d @ d)


# ---------------------------------------------------------------------------
# Differentiable forward pass and per-component gradients w.r.t. the logits.


@dataclass
class _Forward:
    X: np.ndarray
    W: np.ndarray
    S: np.ndarray
    delta: np.ndarray  # X_i - S_j, (n, m, 3)
    dist: np.ndarray  # (n, m)
    soft_w: np.ndarray  # soft-min weights over skeleton points, (n, m)
    D: np.ndarray  # smoothed nearest distances, (n,)
    R: np.ndarray  # smoothed radii, (m,)


def _forward(Z: np.ndarray, X: np.ndarray) -> _Forward:
    W = column_softmax(Z)
    S = W.T @ X
    delta = X[:, None, :] - S[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta) + _EPS)
    a = -dist / SOFTMIN_TEMPERATURE
    a = np.exp(a - a.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    D = np.sum(a * dist, axis=1)
    return _Forward(X, W, S, delta, dist, a, D, W.T @ D)


def _backprop(f: _Forward, gS: np.ndarray, gR: np.ndarray, gdist: np.ndarray | None = None) -> np.ndarray:
    """Chain rule from gradients on S, R (and optionally dist) back to the logits."""
    gW = np.outer(f.D, gR)
    gD = f.W @ gR
    g_dist = f.soft_w * (1.0 - (f.dist - f.D[:, None]) / SOFTMIN_TEMPERATURE) * gD[:, None]
    if gdist is not None:
        g_dist = g_dist + gdist
    # dist_ij depends on S_j through -delta_ij / dist_ij
    gS = gS - np.einsum("ij,ijk->jk", g_dist / f.dist, f.delta)
    gW += f.X @ gS.T
    return f.W * (gW - np.sum(f.W * gW, axis=0, keepdims=True))


def _pairwise_sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared distances by expansion; only used to select nearest pairs."""
    return np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)


def _loss_s(f: _Forward):
    """Bidirectional unsquared chamfer (means) between samples and sphere-surface points."""
    m = len(f.S)
    n_dir = len(SURFACE_DIRECTIONS)
    P = sphere_surface_points(f.S, f.R)
    d = _pairwise_sq(f.X, P)
    p_near = np.argmin(d, axis=1)
    x_near = np.argmin(d, axis=0)
    # exact residuals at the selected pairs
    r1 = P[p_near] - f.X
    d1 = np.sqrt(np.sum(r1 * r1, axis=1) + _EPS)
    r2 = P - f.X[x_near]
    d2 = np.sqrt(np.sum(r2 * r2, axis=1) + _EPS)
    value = float(np.mean(d1) + np.mean(d2))
    gP = r2 / d2[:, None] / len(P)
    np.add.at(gP, p_near, r1 / d1[:, None] / len(f.X))
    gP = gP.reshape(m, n_dir, 3)
    gS = gP.sum(axis=1)
    gR = np.einsum("jkd,kd->j", gP, SURFACE_DIRECTIONS)
    return value, gS, gR, None


def _loss_p(f: _Forward):
    """Sample-to-nearest-sphere residual plus centre-to-nearest-sample pull."""
    n, m = f.dist.shape
    c = np.argmin(f.dist, axis=1)
    i_idx = np.arange(n)
    resid = f.dist[i_idx, c] - f.R[c]
    near_i = np.argmin(f.dist, axis=0)
    j_idx = np.arange(m)
    d_near = f.dist[near_i, j_idx]
    value = float(np.mean(resid**2) + np.mean(d_near**2))
    gdist = np.zeros_like(f.dist)
    gdist[i_idx, c] += 2.0 * resid / n
    gdist[near_i, j_idx] += 2.0 * d_near / m
    gR = np.zeros(m)
    np.add.at(gR, c, -2.0 * resid / n)
    return value, np.zeros_like(f.S), gR, gdist


def _loss_r(f: _Forward):
    m = len(f.R)
    return float(-np.mean(f.R)), np.zeros_like(f.S), np.full(m, -1.0 / m), None


def _ddl_grad(A: np.ndarray, B: np.ndarray):
    """Value of the unsquared bidirectional NN sum and its gradients w.r.t. A and B."""
    diff = A[:, None, :] - B[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff) + _EPS)
    ia, ib = np.arange(len(A)), np.arange(len(B))
    b_near = np.argmin(d, axis=1)
    a_near = np.argmin(d, axis=0)
    value = float(np.sum(d[ia, b_near]) + np.sum(d[a_near, ib]))
    u1 = diff[ia, b_near] / d[ia, b_near][:, None]
    u2 = diff[a_near, ib] / d[a_near, ib][:, None]
    gA = u1.copy()
    np.add.at(gA, a_near, u2)
    gB = -u2
    np.add.at(gB, b_near, -u1)
    return value, gA, gB


COMPONENTS = {"L_s": _loss_s, "L_p": _loss_p, "L_r": _loss_r}


def bsp_components(Z: np.ndarray, samples, with_grad: bool = True) -> dict:
    """Each basic-skeleton loss component with its gradient w.r.t. the logits ``Z``."""
    f = _forward(np.asarray(Z, dtype=float), as_points(samples))
    out = {}
    for name, fn in COMPONENTS.items():
        value, gS, gR, gdist = fn(f)
        out[name] = (value, _backprop(f, gS, gR, gdist) if with_grad else None)
    return out


def ddl_component(Zx: np.ndarray, samples_x, Zy: np.ndarray, samples_y,
                  alignment: RigidTransform | None = None):
    """``l_ddl`` between (aligned) source and target skeletons and its logit gradients."""
    fx = _forward(np.asarray(Zx, dtype=float), as_points(samples_x))
    fy = _forward(np.asarray(Zy, dtype=float), as_points(samples_y))
    Sx = fx.S if alignment is None else alignment.apply(fx.S)
    value, gA, gB = _ddl_grad(Sx, fy.S)
    if alignment is not None:
        gA = gA @ alignment.rotation
    zero_x, zero_y = np.zeros(len(fx.S)), np.zeros(len(fy.S))
    return value, _backprop(fx, gA, zero_x), _backprop(fy, gB, zero_y)


def loss_bsp(samples, skeleton: Skeleton | np.ndarray, lambda1: float = 0.3, lambda2: float = 0.4):
    """``(total, L_s, L_p, L_r)`` for a skeleton given by its logits or weights.

    Accepts either a :class:`Skeleton` (its weights are used as the convex combination)
    or a logit matrix. Radii inside the loss use the smoothed nearest distance.
    """
    if isinstance(skeleton, Skeleton):
        Z = np.log(np.maximum(skeleton.weights, 1e-300))
    else:
        Z = np.asarray(skeleton, dtype=float)
    comps = bsp_components(Z, samples, with_grad=False)
    ls, lp, lr = comps["L_s"][0], comps["L_p"][0], comps["L_r"][0]
    return ls + lambda1 * lp + lambda2 * lr, ls, lp, lr


def _bsp_value_grad(Z, X, cfg: SkeletonConfig):
    f = _forward(Z, X)
    ls, gS_s, gR_s, _ = _loss_s(f)
    lp, gS_p, gR_p, gdist_p = _loss_p(f)
    lr, _, gR_r, _ = _loss_r(f)
    value = ls + cfg.lambda1 * lp + cfg.lambda2 * lr
    grad = _backprop(f, gS_s + cfg.lambda1 * gS_p,
                     gR_s + cfg.lambda1 * gR_p + cfg.lambda2 * gR_r, cfg.lambda1 * gdist_p)
    return value, grad, {"L_s": ls, "L_p": lp, "L_r": lr}


# ---------------------------------------------------------------------------
# Optimisation


def initial_logits(samples: np.ndarray, n_skeleton: int) -> np.ndarray:
    """Logits of a distance kernel centred on the first ``n_skeleton`` samples.

    Samples arrive in FPS order, so the seeds are spread over the shape. Column j is
    ``-||x_i - x_j|| / INIT_TEMPERATURE``: a soft one-hot peaked on seed j whose weights
    decay with distance.
    """
    seeds = samples[:n_skeleton]
    d = np.sqrt(np.sum((samples[:, None, :] - seeds[None, :, :]) ** 2, axis=2))
    return -d / INIT_TEMPERATURE


def build_skeleton(Z: np.ndarray, samples: np.ndarray) -> Skeleton:
    W = column_softmax(Z)
    S = W.T @ samples
    D = nearest_distances(samples, S)
    return Skeleton(points=S, radii=W.T @ D, weights=W, samples=np.array(samples))


def _sample(cloud, cfg: SkeletonConfig) -> np.ndarray:
    pts = as_points(cloud)
    if len(pts) < cfg.n_samples:
        raise GeometryError(f"cloud has {len(pts)} points, need >= {cfg.n_samples}")
    idx = fps_indices(PointCloud(pts), cfg.n_samples, seed=cfg.seed)
    return pts[idx]


def extract_skeleton_pair(source, target, cfg: SkeletonConfig = SkeletonConfig(),
                          alignment: RigidTransform | None = None):
    """Jointly fit source and target skeletons.

    Minimises ``L_bsp(X) + L_bsp(Y) + lambda_ddl * l_ddl(A(S_x), S_y)`` by gradient descent
    with step halving. ``alignment`` (A) is a fixed transform taking source coordinates
    to target coordinates; no gradient flows into it. With ``alignment=None`` the
    skeletons are compared in their own frames.

    Returns ``(source_skeleton, target_skeleton, trace)`` where ``trace`` is a list of
    per-step dicts with keys ``step, L_s, L_p, L_r, L_ddl, total``.
    """
    Xs = _sample(source, cfg)
    Ys = _sample(target, cfg)
    Zx = initial_logits(Xs, cfg.n_skeleton)
    Zy = initial_logits(Ys, cfg.n_skeleton)
    if cfg.lambda_ddl == 0:
        # Independent problems: separate descents, so neither step schedule sees the other cloud.
        (Zx,), tx = _descend(_single_objective(Xs, cfg), [Zx], cfg)
        (Zy,), ty = _descend(_single_objective(Ys, cfg), [Zy], cfg)
        return build_skeleton(Zx, Xs), build_skeleton(Zy, Ys), _merge_traces(tx, ty)

    def evaluate(Zx, Zy):
        vx, gx, px = _bsp_value_grad(Zx, Xs, cfg)
        vy, gy, py = _bsp_value_grad(Zy, Ys, cfg)
        ddl, dgx, dgy = ddl_component(Zx, Xs, Zy, Ys, alignment)
        gx = gx + cfg.lambda_ddl * dgx
        gy = gy + cfg.lambda_ddl * dgy
        total = vx + vy + cfg.lambda_ddl * ddl
        parts = {k: px[k] + py[k] for k in px}
        parts["L_ddl"] = ddl
        return total, [gx, gy], parts

    (Zx, Zy), trace = _descend(evaluate, [Zx, Zy], cfg)
    for Z in (Zx, Zy):
        check_simplex(column_softmax(Z), 1e-9)
    return build_skeleton(Zx, Xs), build_skeleton(Zy, Ys), trace


def _descend(evaluate, params, cfg: SkeletonConfig):
    """Normalised gradient descent with step halving on loss increase.

    The step moves the largest logit by at most ``cfg.step_size``. A halved step scale is
    kept for the next iteration and doubled back (up to 1) after each accepted step.
    Stops early once the loss has improved by less than ``cfg.tol`` (relative) over
    ``PATIENCE`` steps.
    """
    total, grads, parts = evaluate(*params)
    if not np.isfinite(total):
        raise DivergenceError(0)
    trace = [{"step": 0, **parts, "total": total}]
    scale = 1.0
    for step in range(1, cfg.steps + 1):
        gmax = max(float(np.max(np.abs(g))) for g in grads)
        if gmax == 0.0:
            break
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            eta = scale * cfg.step_size / gmax
            trial = [p - eta * g for p, g in zip(params, grads)]
            new = evaluate(*trial)
            if np.isfinite(new[0]) and new[0] <= total:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        params = trial
        total, grads, parts = new
        scale = min(1.0, 2.0 * scale)
        trace.append({"step": step, **parts, "total": total})
        if step >= PATIENCE:
            past = trace[-PATIENCE - 1]["total"]
            if past - total <= cfg.tol * max(abs(past), 1e-12):
                break
    return params, trace


def _single_objective(X: np.ndarray, cfg: SkeletonConfig):
    def evaluate(Z):
        value, grad, parts = _bsp_value_grad(Z, X, cfg)
        return value, [grad], {**parts, "L_ddl": 0.0}

    return evaluate


def _merge_traces(a: list, b: list) -> list:
    """Sum two traces step by step; the shorter one holds its final values."""
    out = []
    for step in range(max(len(a), len(b))):
        ra, rb = a[min(step, len(a) - 1)], b[min(step, len(b) - 1)]
        out.append({"step": step, **{k: ra[k] + rb[k] for k in ra if k != "step"}})
    return out


def extract_skeleton(cloud, cfg: SkeletonConfig = SkeletonConfig()) -> Skeleton:
    """Fit a single skeleton (no coupling term)."""
    X = _sample(cloud, cfg)
    (Z,), _ = _descend(_single_objective(X, cfg), [initial_logits(X, cfg.n_skeleton)], cfg)
    return build_skeleton(Z, X)
