import json

import numpy as np
import pytest

from skelreg import skeleton as sk
from skelreg.geometry import GeometryError, PointCloud, RigidTransform, rotation_about_axis
from skelreg.io import read_trace_csv, write_trace_csv
from skelreg.shapes import make_shape
from skelreg.skeleton import (
    SOFTMIN_TEMPERATURE,
    SURFACE_DIRECTIONS,
    DivergenceError,
    Skeleton,
    SkeletonConfig,
    bsp_components,
    check_simplex,
    column_softmax,
    ddl_component,
    extract_skeleton_pair,
    loss_bsp,
    loss_registration,
    nearest_skeleton_distance,
    skeleton_points,
    skeleton_radii,
)

from conftest import random_tf

EPS = 1e-12
SMALL = SkeletonConfig(n_samples=64, n_skeleton=12, steps=60)


# -- straight-line reimplementation of the loss components ---------------------

def _dist(a, b):
    return np.sqrt(sum((a[k] - b[k]) ** 2 for k in range(3)) + EPS)


def oracle_components(W, X):
    n, m = W.shape
    S = [sum(W[i, j] * X[i] for i in range(n)) for j in range(m)]
    D = []
    for i in range(n):
        ds = [_dist(X[i], S[j]) for j in range(m)]
        lo = min(ds)
        e = [np.exp(-(d - lo) / SOFTMIN_TEMPERATURE) for d in ds]
        D.append(sum(ei * di for ei, di in zip(e, ds)) / sum(e))
    R = [sum(W[i, j] * D[i] for i in range(n)) for j in range(m)]
    P = [S[j] + R[j] * u for j in range(m) for u in SURFACE_DIRECTIONS]
    l_s = (sum(min(_dist(x, p) for p in P) for x in X) / n
           + sum(min(_dist(p, x) for x in X) for p in P) / len(P))
    residual = 0.0
    for i in range(n):
        ds = [_dist(X[i], S[j]) for j in range(m)]
        c = int(np.argmin(ds))
        residual += (ds[c] - R[c]) ** 2
    residual /= n
    pull = sum(min(_dist(X[i], S[j]) for i in range(n)) ** 2 for j in range(m)) / m
    l_r = -sum(R) / m
    return l_s, residual, pull, l_r


# -- simplex and elementary maps -----------------------------------------------

def test_check_simplex():
    check_simplex(np.full((4, 2), 0.25))
    with pytest.raises(GeometryError):
        check_simplex(np.full((4, 2), 0.3))
    with pytest.raises(GeometryError):
        check_simplex(np.array([[1.1], [-0.1]]))


def test_column_softmax_on_simplex(rng):
    W = column_softmax(rng.normal(0, 5, (30, 7)))
    assert W.min() >= 0
    np.testing.assert_allclose(W.sum(axis=0), 1.0, atol=1e-12)


def test_skeleton_points_one_hot_and_uniform(rng):
    X = rng.normal(size=(10, 3))
    W = np.zeros((10, 4))
    W[[2, 5, 5, 9], range(4)] = 1.0
    np.testing.assert_array_equal(skeleton_points(W, X), X[[2, 5, 5, 9]])
    U = np.full((10, 4), 0.1)
    np.testing.assert_allclose(skeleton_points(U, X), np.tile(X.mean(axis=0), (4, 1)), atol=1e-12)


def test_skeleton_points_brute_force(rng):
    for _ in range(10):
        X = rng.normal(size=(10, 3))
        W = column_softmax(rng.normal(size=(10, 4)))
        brute = np.array([[sum(W[i, j] * X[i, k] for i in range(10)) for k in range(3)] for j in range(4)])
        np.testing.assert_allclose(skeleton_points(W, X), brute, atol=1e-12)


def test_skeleton_points_rejects_non_simplex(rng):
    with pytest.raises(GeometryError):
        skeleton_points(np.full((10, 4), 0.2), rng.normal(size=(10, 3)))


def test_skeleton_points_inside_hull(rng):
    X = rng.uniform(-1, 1, (50, 3))
    S = skeleton_points(column_softmax(rng.normal(size=(50, 8))), X)
    assert np.all(S >= X.min(axis=0) - 1e-12) and np.all(S <= X.max(axis=0) + 1e-12)


def test_nearest_skeleton_distance(rng):
    S = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    assert nearest_skeleton_distance([0, 0, 0], S) == 1.0
    assert nearest_skeleton_distance([0, 2, 0], S) == 0.0
    for _ in range(20):
        x, T = rng.normal(size=3), rng.normal(size=(7, 3))
        assert nearest_skeleton_distance(x, T) == pytest.approx(min(np.linalg.norm(x - t) for t in T), abs=1e-12)
    with pytest.raises(GeometryError):
        nearest_skeleton_distance([0, 0, 0], np.zeros((0, 3)))


def test_skeleton_radii(rng):
    W = column_softmax(rng.normal(size=(12, 5)))
    np.testing.assert_array_equal(skeleton_radii(W, np.zeros(12)), np.zeros(5))
    D = rng.uniform(0, 1, 12)
    one_hot = np.zeros((12, 3))
    one_hot[[4, 0, 11], range(3)] = 1.0
    np.testing.assert_array_equal(skeleton_radii(one_hot, D), D[[4, 0, 11]])
    dense = np.array([sum(W[i, j] * D[i] for i in range(12)) for j in range(5)])
    np.testing.assert_allclose(skeleton_radii(W, D), dense, atol=1e-12)
    assert np.all(skeleton_radii(W, D) >= 0)
    with pytest.raises(GeometryError):
        skeleton_radii(W, D[:5])


# -- losses --------------------------------------------------------------------

def test_loss_registration_hand_values(rng):
    tf = random_tf(rng)
    assert loss_registration(tf, tf) == pytest.approx(0.0, abs=1e-20)
    rz = RigidTransform(rotation_about_axis([0, 0, 1], np.pi), np.zeros(3))
    assert loss_registration(RigidTransform.identity(), rz) == pytest.approx(8.0, abs=1e-12)
    for _ in range(20):
        assert loss_registration(random_tf(rng), random_tf(rng)) >= 0


def test_components_match_straight_line_oracle(rng):
    for _ in range(5):
        n, m = int(rng.integers(8, 20)), int(rng.integers(2, 6))
        X = rng.uniform(-1, 1, (n, 3))
        Z = rng.normal(0, 2, (n, m))
        comps = bsp_components(Z, X, with_grad=False)
        l_s, residual, pull, l_r = oracle_components(column_softmax(Z), X)
        assert abs(comps["L_s"][0] - l_s) <= 1e-10
        assert abs(comps["L_p"][0] - (residual + pull)) <= 1e-10
        assert abs(comps["L_r"][0] - l_r) <= 1e-10


def test_loss_bsp_total_and_skeleton_input(rng):
    X = rng.uniform(-1, 1, (16, 3))
    Z = rng.normal(size=(16, 4))
    total, l_s, l_p, l_r = loss_bsp(X, Z, 0.3, 0.4)
    assert total == pytest.approx(l_s + 0.3 * l_p + 0.4 * l_r, abs=1e-12)
    W = column_softmax(Z)
    S = W.T @ X
    skel = Skeleton(S, np.zeros(4), W, X)
    np.testing.assert_allclose(loss_bsp(X, skel, 0.3, 0.4), (total, l_s, l_p, l_r), atol=1e-10)


def test_sphere_cloud_residual_vanishes():
    # samples on a sphere of radius r; one skeleton point at its centre with r as radius
    r = 0.7
    golden = np.pi * (3 - np.sqrt(5))
    k = np.arange(100)
    z = 1 - 2 * (k + 0.5) / 100
    rho = np.sqrt(1 - z * z)
    half = r * np.column_stack([rho * np.cos(golden * k), rho * np.sin(golden * k), z])
    # antipodal pairs put the sample centroid exactly at the origin
    X = np.vstack([half, -half])
    W = np.full((200, 1), 1 / 200)
    S = skeleton_points(W, X)
    radii = skeleton_radii(W, np.linalg.norm(X - S, axis=1))
    assert np.linalg.norm(S) < 1e-12 and abs(radii[0] - r) < 1e-6
    _, residual, pull, _ = oracle_components(W, X)
    assert residual < 1e-3
    # the centre-pull part is the squared distance from the centre to the nearest sample
    assert pull == pytest.approx(r * r, abs=1e-6)
    _, _, l_p, _ = loss_bsp(X, np.zeros((200, 1)))
    assert abs(l_p - r * r) < 1e-3


def test_l_r_decreases_with_radius(rng):
    X = rng.uniform(-1, 1, (20, 3))
    f = sk._forward(rng.normal(size=(20, 4)), X)
    base = sk._loss_r(f)[0]
    f.R = f.R.copy()
    f.R[2] += 0.1
    assert sk._loss_r(f)[0] < base


def _finite_difference(fn, Z, h=1e-6):
    g = np.zeros_like(Z)
    for idx in np.ndindex(*Z.shape):
        Zp, Zm = Z.copy(), Z.copy()
        Zp[idx] += h
        Zm[idx] -= h
        g[idx] = (fn(Zp) - fn(Zm)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("name", ["L_s", "L_p", "L_r"])
def test_bsp_gradients_match_finite_differences(name):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        n, m = int(rng.integers(8, 33)), int(rng.integers(2, 9))
        X = rng.uniform(-1, 1, (n, 3))
        Z = rng.normal(0, 2, (n, m))
        grad = bsp_components(Z, X)[name][1]
        fd = _finite_difference(lambda z: bsp_components(z, X, False)[name][0], Z)
        worst = max(worst, _rel(grad, fd))
    assert worst < 1e-4


def test_ddl_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n, m = int(rng.integers(8, 33)), int(rng.integers(2, 9))
        X, Y = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3))
        Zx, Zy = rng.normal(0, 2, (n, m)), rng.normal(0, 2, (n, m))
        A = random_tf(rng)
        _, gx, gy = ddl_component(Zx, X, Zy, Y, A)
        fx = _finite_difference(lambda z: ddl_component(z, X, Zy, Y, A)[0], Zx)
        fy = _finite_difference(lambda z: ddl_component(Zx, X, z, Y, A)[0], Zy)
        worst = max(worst, _rel(gx, fx), _rel(gy, fy))
    assert worst < 1e-4


# -- optimisation --------------------------------------------------------------

@pytest.fixture(scope="module")
def pair():
    a = make_shape("table", 256, seed=3)
    b = make_shape("table", 256, seed=4)
    return a, b


def test_extract_pair_trace_and_simplex(pair):
    sx, sy, trace = extract_skeleton_pair(*pair, SMALL)
    assert trace[-1]["total"] <= trace[0]["total"]
    assert [r["step"] for r in trace] == list(range(len(trace)))
    for s in (sx, sy):
        assert len(s) == 12 and s.weights.shape == (64, 12)
        check_simplex(s.weights, 1e-9)
        np.testing.assert_allclose(s.points, s.weights.T @ s.samples, atol=1e-9)
        assert np.all(s.radii >= 0)


def test_trace_totals_never_increase(pair):
    _, _, trace = extract_skeleton_pair(*pair, SMALL)
    totals = [r["total"] for r in trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_decoupled_source_ignores_target(pair):
    cfg = SkeletonConfig(n_samples=64, n_skeleton=12, steps=40, lambda_ddl=0.0)
    other = make_shape("airplane", 300, seed=9)
    a, _, _ = extract_skeleton_pair(pair[0], pair[1], cfg)
    b, _, _ = extract_skeleton_pair(pair[0], other, cfg)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.radii, b.radii)


def test_circle_skeleton_moves_inward():
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    circle = PointCloud(np.column_stack([np.cos(t), np.sin(t), np.zeros_like(t)]))
    s, _, _ = extract_skeleton_pair(circle, circle, SkeletonConfig(n_samples=128, n_skeleton=16, steps=100))
    c = circle.points.mean(axis=0)
    assert np.mean(np.linalg.norm(s.points - c, axis=1)) < np.mean(np.linalg.norm(circle.points - c, axis=1))


def test_too_few_points():
    with pytest.raises(GeometryError):
        extract_skeleton_pair(make_shape("sphere", 32), make_shape("sphere", 300), SMALL)


def test_divergence_reports_step(pair, monkeypatch):
    real = sk._bsp_value_grad

    def poisoned(Z, X, cfg):
        value, grad, parts = real(Z, X, cfg)
        return np.nan, grad, parts

    monkeypatch.setattr(sk, "_bsp_value_grad", poisoned)
    with pytest.raises(DivergenceError, match="diverged") as info:
        extract_skeleton_pair(*pair, SMALL)
    assert info.value.step == 0


def test_config_validation():
    with pytest.raises(ValueError):
        SkeletonConfig(n_samples=8, n_skeleton=16)
    with pytest.raises(ValueError):
        SkeletonConfig(lambda1=-1)
    with pytest.raises(ValueError):
        SkeletonConfig(steps=0)


def test_serialisation(pair, tmp_path):
    sx, _, trace = extract_skeleton_pair(*pair, SMALL)
    doc = json.loads(json.dumps(sx.to_json(SMALL)))
    assert set(doc) == {"points", "radii", "n_samples", "config"}
    assert doc["n_samples"] == 64 and doc["config"]["n_skeleton"] == 12
    np.testing.assert_array_equal(np.array(doc["points"]), sx.points)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    assert path.read_text().splitlines()[0] == "step,L_s,L_p,L_r,L_ddl,total"
    back = read_trace_csv(path)
    assert back == [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in trace]
