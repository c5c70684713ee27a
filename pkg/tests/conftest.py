import sys

import numpy as np
import pytest

from skelreg.geometry import PointCloud, RigidTransform, rotation_about_axis
from skelreg.shapes import make_shape


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def table_cloud():
    return make_shape("table", 1024, seed=0)


@pytest.fixture(scope="session")
def airplane_cloud():
    return make_shape("airplane", 1024, seed=0)


def random_so3(rng):
    return rotation_about_axis(rng.normal(size=3), rng.uniform(0, np.pi))


def random_tf(rng, max_t=1.0):
    return RigidTransform(random_so3(rng), rng.uniform(-max_t, max_t, 3))


def brute_nn(a, b):
    """Nearest distance from each point of a to b by a double loop (lowest index on ties)."""
    out = np.empty(len(a))
    arg = np.empty(len(a), dtype=int)
    for i, p in enumerate(a):
        best, best_j = np.inf, -1
        for j, q in enumerate(b):
            d = np.sqrt(np.sum((p - q) ** 2))
            if d < best:
                best, best_j = d, j
        out[i], arg[i] = best, best_j
    return out, arg


def cloud(points):
    return PointCloud(np.asarray(points, dtype=float))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
