import numpy as np
import pytest

from skelreg.geometry import GeometryError, PointCloud
from skelreg.sampling import fps_indices, fps_sample, rds_indices, rds_sample


def min_pairwise(p):
    d = np.linalg.norm(p[:, None] - p[None], axis=2)
    d[np.diag_indices(len(p))] = np.inf
    return d.min()


def test_fps_full_is_permutation(rng):
    pts = rng.uniform(-1, 1, (40, 3))
    idx = fps_indices(pts, 40, seed=1)
    assert sorted(idx.tolist()) == list(range(40))


def test_fps_line_endpoints():
    pts = np.array([[0, 0, 0], [2, 0, 0], [1, 0, 0]], float)
    out = fps_sample(PointCloud(pts), 2, start=0)
    np.testing.assert_array_equal(out.points, [[0, 0, 0], [2, 0, 0]])


def test_fps_spreads_more_than_rds():
    for seed in range(20):
        pts = np.random.default_rng(seed).uniform(-1, 1, (1024, 3))
        cloud = PointCloud(pts)
        assert min_pairwise(fps_sample(cloud, 64, seed=seed).points) >= min_pairwise(rds_sample(cloud, 64, seed).points)


def test_fps_greedy_rule_oracle(rng):
    pts = rng.uniform(-1, 1, (60, 3))
    idx = fps_indices(pts, 10, seed=5)
    chosen = [idx[0]]
    for _ in range(9):
        d = np.min(np.linalg.norm(pts[:, None] - pts[chosen][None], axis=2), axis=1)
        chosen.append(int(np.argmax(d)))
    assert idx.tolist() == chosen


def test_rds_full_and_deterministic(rng):
    pts = rng.uniform(-1, 1, (50, 3))
    assert sorted(rds_indices(pts, 50, 3).tolist()) == list(range(50))
    np.testing.assert_array_equal(rds_indices(pts, 20, 7), rds_indices(pts, 20, 7))
    np.testing.assert_array_equal(fps_indices(pts, 20, seed=7), fps_indices(pts, 20, seed=7))


def test_rds_distinct_seeds_differ():
    pts = np.random.default_rng(0).uniform(-1, 1, (1024, 3))
    for s in range(100):
        a = set(rds_indices(pts, 128, 2 * s).tolist())
        b = set(rds_indices(pts, 128, 2 * s + 1).tolist())
        assert a != b


@pytest.mark.parametrize("k", [0, 11])
def test_k_out_of_range(k):
    pts = np.zeros((10, 3)) + np.arange(10)[:, None]
    with pytest.raises(GeometryError):
        rds_indices(pts, k, 0)
    with pytest.raises(GeometryError):
        fps_indices(pts, k, seed=0)
