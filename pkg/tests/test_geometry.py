import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from skelreg.geometry import (
    GeometryError,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    alignment_error,
    apply_transform,
    normalize_cloud,
    procrustes_solve,
    rotation_about_axis,
)

from conftest import brute_nn, cloud, random_so3, random_tf


# -- normalize_cloud ---------------------------------------------------------

def test_normalize_cube_corners_unchanged():
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
    out, rec = normalize_cloud(cloud(corners))
    np.testing.assert_array_equal(out.points, corners)
    assert rec.scale == 1.0
    np.testing.assert_array_equal(rec.offset, 0.0)


def test_normalize_hand_computed():
    pts = np.array([[2, 0, 0], [4, 0, 0], [3, 1, 0]], float)
    out, rec = normalize_cloud(cloud(pts))
    # centroid (3, 1/3, 0); centred x in {-1, 1, 0}, y in {-1/3, -1/3, 2/3}: extent 1
    np.testing.assert_allclose(rec.offset, [3, 1 / 3, 0], atol=1e-15)
    assert rec.scale == pytest.approx(1.0)
    np.testing.assert_allclose(out.points, [[-1, -1 / 3, 0], [1, -1 / 3, 0], [0, 2 / 3, 0]], atol=1e-15)
    np.testing.assert_allclose(rec.invert(out.points), pts, atol=1e-15)


def test_normalize_zero_extent():
    with pytest.raises(GeometryError, match="zero extent"):
        normalize_cloud(cloud(np.tile([1.0, 2.0, 3.0], (5, 1))))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 3), elements=st.floats(-100, 100)))
def test_normalize_properties(pts):
    if np.ptp(pts, axis=0).max() < 1e-6:
        return
    out, rec = normalize_cloud(cloud(pts))
    assert np.max(np.abs(out.points)) == pytest.approx(1.0)
    np.testing.assert_allclose(out.points.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(rec.invert(out.points), pts, atol=1e-9 * max(1.0, np.abs(pts).max()))


def test_pointcloud_rejects_non_finite():
    with pytest.raises(GeometryError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


# -- RigidTransform / apply_transform ---------------------------------------

def test_rigid_transform_rejects_reflection():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_apply_identity():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    c = PointCloud(pts, ["clean"] * 10)
    out = apply_transform(c, RigidTransform.identity())
    np.testing.assert_array_equal(out.points, pts)
    assert list(out.labels) == ["clean"] * 10


def test_apply_rz90():
    tf = RigidTransform(rotation_about_axis([0, 0, 1], np.pi / 2), np.zeros(3))
    np.testing.assert_allclose(tf.apply([[1.0, 0.0, 0.0]]), [[0.0, 1.0, 0.0]], atol=1e-12)


def test_apply_then_inverse(rng):
    for _ in range(20):
        tf = random_tf(rng)
        pts = rng.uniform(-1, 1, (50, 3))
        back = apply_transform(apply_transform(cloud(pts), tf), tf.inverse())
        np.testing.assert_allclose(back.points, pts, atol=1e-10)
        inv = tf.inverse()
        np.testing.assert_allclose(inv.rotation, tf.rotation.T)
        np.testing.assert_allclose(inv.translation, -tf.rotation.T @ tf.translation)


# -- procrustes_solve --------------------------------------------------------

def test_procrustes_identity(rng):
    X = rng.uniform(-1, 1, (30, 3))
    tf = procrustes_solve(X, X)
    np.testing.assert_allclose(tf.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(tf.translation, 0.0, atol=1e-12)


def test_procrustes_recovers_random_transform(rng):
    for _ in range(50):
        R0 = random_so3(rng)
        t0 = rng.uniform(-1, 1, 3)
        X = rng.uniform(-1, 1, (40, 3))
        Y = X @ R0.T + t0
        tf = procrustes_solve(X, Y)
        assert np.max(np.abs(tf.rotation - R0)) < 1e-9
        assert np.max(np.abs(tf.translation - t0)) < 1e-9
        # residual check with the recovered transform
        assert np.max(np.abs(tf.apply(X) - Y)) < 1e-9


def test_procrustes_collinear_rank_deficient():
    X = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], float)
    # oracle: centred covariance has rank < 2
    Xc = X - X.mean(axis=0)
    assert np.linalg.matrix_rank(Xc.T @ Xc) < 2
    with pytest.raises(GeometryError, match="rank-deficient covariance"):
        procrustes_solve(X, X)


def test_procrustes_reflection_corrected(rng):
    # a mirrored target would make V U^T a reflection; output must still be in SO(3)
    for _ in range(20):
        X = rng.uniform(-1, 1, (20, 3))
        Y = X * np.array([1.0, 1.0, -1.0]) + rng.normal(scale=0.01, size=X.shape)
        tf = procrustes_solve(X, Y)
        R = tf.rotation
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_procrustes_optimal_against_perturbations(rng):
    X = rng.uniform(-1, 1, (60, 3))
    gt = random_tf(rng)
    Y = gt.apply(X)
    tf = procrustes_solve(X, Y)
    best = alignment_error(X, Y, tf)
    for _ in range(1000):
        d = RigidTransform(rotation_about_axis(rng.normal(size=3), rng.uniform(0, 0.2)),
                           rng.normal(scale=0.05, size=3))
        assert best <= alignment_error(X, Y, d.compose(tf))


def test_procrustes_deterministic(rng):
    X = rng.uniform(-1, 1, (25, 3))
    Y = X + rng.normal(scale=0.1, size=X.shape)
    a, b = procrustes_solve(X, Y), procrustes_solve(X, Y)
    np.testing.assert_array_equal(a.rotation, b.rotation)
    np.testing.assert_array_equal(a.translation, b.translation)


# -- SpatialIndex ------------------------------------------------------------

def test_spatial_index_matches_brute_force(rng):
    for _ in range(50):
        pts = rng.uniform(-1, 1, (int(rng.integers(5, 80)), 3))
        q = rng.uniform(-1, 1, (20, 3))
        d, i = SpatialIndex(pts).nearest(q)
        bd, bi = brute_nn(q, pts)
        np.testing.assert_array_equal(i, bi)
        assert np.max(np.abs(d - bd)) <= 1e-12


def test_spatial_index_ties_lowest_index():
    # lattice points: many exact ties
    g = np.array([[x, y, 0] for x in range(4) for y in range(4)], float)
    pts = np.vstack([g, g])  # duplicates: second copy must never be returned
    idx = SpatialIndex(pts)
    q = np.array([[0.5, 0.5, 0.0], [1.5, 0.5, 0.0], [3.0, 3.0, 0.0]])
    _, i = idx.nearest(q)
    _, bi = brute_nn(q, pts)
    np.testing.assert_array_equal(i, bi)
    assert np.all(i < len(g))
    d, ik = idx.query(q, k=4)
    for row in range(len(q)):
        dd = np.linalg.norm(pts - q[row], axis=1)
        expect = np.lexsort((np.arange(len(pts)), dd))[:4]
        np.testing.assert_array_equal(ik[row], expect)
