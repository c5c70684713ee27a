import numpy as np
import pytest

from skelreg.geometry import GeometryError, RigidTransform, rotation_about_axis
from skelreg.metrics import (
    ErrorMetrics,
    chamfer_distance,
    error_metrics,
    euler_zyx,
    l_ddl,
    rotation_error_degrees,
    transform_errors,
)

from conftest import random_so3


def brute_chamfer(a, b):
    s = 0.0
    for p in a:
        s += min(float(np.sum((p - q) ** 2)) for q in b)
    for q in b:
        s += min(float(np.sum((q - p) ** 2)) for p in a)
    return 1e-4 * s


def brute_ddl(a, b):
    s = 0.0
    for p in a:
        s += min(float(np.sqrt(np.sum((p - q) ** 2))) for q in b)
    for q in b:
        s += min(float(np.sqrt(np.sum((q - p) ** 2))) for p in a)
    return s


def test_chamfer_hand_values():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0.0, 0.0]])
    assert chamfer_distance(a, b) == pytest.approx(2e-4, abs=1e-18)
    assert chamfer_distance(a, a) == 0.0


def test_l_ddl_hand_values():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0.0, 0.0]])
    assert l_ddl(a, b) == 2.0
    assert l_ddl(b, b) == 0.0


def test_chamfer_matches_brute_force(rng):
    for _ in range(10):
        a, b = rng.uniform(-1, 1, (50, 3)), rng.uniform(-1, 1, (37, 3))
        assert abs(chamfer_distance(a, b) - brute_chamfer(a, b)) <= 1e-12
        assert chamfer_distance(a, b) == chamfer_distance(b, a)


def test_chamfer_large_path_matches_brute_force(rng):
    # above the dense-matrix size limit the k-d tree path is taken
    a, b = rng.uniform(-1, 1, (600, 3)), rng.uniform(-1, 1, (500, 3))
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    expect = 1e-4 * (np.sum(d.min(1) ** 2) + np.sum(d.min(0) ** 2))
    assert abs(chamfer_distance(a, b) - expect) <= 1e-12


def test_l_ddl_matches_brute_force(rng):
    for _ in range(10):
        a, b = rng.uniform(-1, 1, (30, 3)), rng.uniform(-1, 1, (30, 3))
        assert abs(l_ddl(a, b) - brute_ddl(a, b)) <= 1e-12


def test_distances_reject_empty():
    with pytest.raises(GeometryError):
        chamfer_distance(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(GeometryError):
        l_ddl(np.zeros((2, 3)), np.zeros((0, 3)))


def test_rotation_error_identity_exact_zero():
    tf = RigidTransform.identity()
    err = rotation_error_degrees(tf, tf)
    assert list(err.degrees) == [0.0, 0.0, 0.0]
    assert not err.gimbal_lock


def test_rotation_error_rz30():
    est = RigidTransform(rotation_about_axis([0, 0, 1], np.deg2rad(30)), np.zeros(3))
    err = rotation_error_degrees(est, RigidTransform.identity()).degrees
    np.testing.assert_allclose(err, [30.0, 0.0, 0.0], atol=1e-10)


def test_rotation_error_right_composition_invariant(rng):
    for _ in range(100):
        A, B, Q = random_so3(rng), random_so3(rng), random_so3(rng)
        e1 = rotation_error_degrees(RigidTransform(A, np.zeros(3)), RigidTransform(B, np.zeros(3))).degrees
        e2 = rotation_error_degrees(RigidTransform(A @ Q, np.zeros(3)), RigidTransform(B @ Q, np.zeros(3))).degrees
        np.testing.assert_allclose(e1, e2, atol=1e-8)
        assert np.all((e1 >= 0) & (e1 <= 180))


def test_euler_zyx_reconstructs_rotation(rng):
    for _ in range(50):
        R = random_so3(rng)
        (yaw, pitch, roll), _ = euler_zyx(R)
        Rz = rotation_about_axis([0, 0, 1], yaw)
        Ry = rotation_about_axis([0, 1, 0], pitch)
        Rx = rotation_about_axis([1, 0, 0], roll)
        np.testing.assert_allclose(Rz @ Ry @ Rx, R, atol=1e-10)


def test_gimbal_lock_flagged():
    R = rotation_about_axis([0, 1, 0], np.pi / 2)
    err = rotation_error_degrees(RigidTransform(R, np.zeros(3)), RigidTransform.identity())
    assert err.gimbal_lock
    assert np.all(np.isfinite(err.degrees))


def test_error_metrics_identities(rng):
    ests = [RigidTransform(random_so3(rng), rng.normal(size=3)) for _ in range(5)]
    gts = [RigidTransform(random_so3(rng), rng.normal(size=3)) for _ in range(5)]
    m = error_metrics(ests, gts)
    assert m.rmse_r == pytest.approx(np.sqrt(m.mse_r), rel=1e-12)
    assert m.rmse_t == pytest.approx(np.sqrt(m.mse_t), rel=1e-12)
    assert min(m.as_dict().values()) >= 0
    # independent aggregation over 3 axes x all trials
    rot = np.array([transform_errors(e, g)[0] for e, g in zip(ests, gts)])
    assert m.mae_r == pytest.approx(np.abs(rot).mean(), rel=1e-12)
    assert m.mse_r == pytest.approx((rot ** 2).mean(), rel=1e-12)


def test_error_metrics_hand_values():
    m = ErrorMetrics.from_errors([[3.0, 4.0, 0.0]], [[0.0, 0.0, 0.3]])
    assert m.mse_r == pytest.approx(25.0 / 3)
    assert m.mae_r == pytest.approx(7.0 / 3)
    assert m.mae_t == pytest.approx(0.1)
