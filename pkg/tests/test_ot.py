import itertools

import numpy as np
import pytest

from igwflow.cloud import PointCloud, apply_linear
from igwflow.errors import UnsupportedMarginalsError
from igwflow.ot import solve_assignment, solve_ot_bilinear, w2_distance

from .conftest import random_orth


def _enumerate(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


def test_identity_favouring_cost():
    cost = 1.0 - np.eye(4)
    perm, val = solve_assignment(cost)
    assert list(perm) == [0, 1, 2, 3] and val == 0.0


def test_swap():
    perm, val = solve_assignment(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert list(perm) == [1, 0] and val == 0.0


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[0.0, np.inf], [0.0, 0.0]])])
def test_rejects_bad_cost(bad):
    with pytest.raises(ValueError):
        solve_assignment(bad)


def test_random_6x6_matches_enumeration(backend, rng):
    cost = rng.standard_normal((6, 6))
    _, val = solve_assignment(cost)
    assert val == pytest.approx(_enumerate(cost), abs=1e-14)


def test_100_random_7x7(backend, rng):
    for _ in range(100):
        cost = rng.integers(-50, 50, (7, 7)).astype(float)
        _, val = solve_assignment(cost)
        assert val == _enumerate(cost)


def test_bilinear_zero_matrix_returns_identity(rng):
    x = PointCloud(rng.standard_normal((5, 2)))
    y = PointCloud(rng.standard_normal((5, 2)))
    plan, val = solve_ot_bilinear(x, y, np.zeros((2, 2)))
    assert list(plan.perm) == list(range(5)) and val == 0.0


def test_bilinear_two_point_example():
    x = PointCloud(np.array([[1.0, 0.0], [0.0, 1.0]]))
    plan, val = solve_ot_bilinear(x, x, np.eye(2))
    assert list(plan.perm) == [0, 1]
    assert val == -8.0


def test_bilinear_matches_enumeration(rng):
    x = PointCloud(rng.standard_normal((6, 3)))
    y = PointCloud(rng.standard_normal((6, 3)))
    b = rng.standard_normal((3, 3))
    a = b @ b.T
    _, val = solve_ot_bilinear(x, y, a)
    assert val == pytest.approx(_enumerate(-8.0 * x.points @ a @ y.points.T), abs=1e-12)


def test_bilinear_rotation_invariance(rng):
    x = PointCloud(rng.standard_normal((7, 2)))
    y = PointCloud(rng.standard_normal((7, 2)))
    a = rng.standard_normal((2, 2))
    o = random_orth(rng, 2)
    _, v1 = solve_ot_bilinear(x, y, a)
    _, v2 = solve_ot_bilinear(x, apply_linear(y, o), a @ o.T)
    assert v1 == pytest.approx(v2, abs=1e-10)


def test_unsupported_marginals(rng):
    x = PointCloud(rng.standard_normal((3, 2)))
    with pytest.raises(UnsupportedMarginalsError):
        solve_ot_bilinear(x, PointCloud(rng.standard_normal((4, 2))), np.eye(2))
    with pytest.raises(UnsupportedMarginalsError):
        w2_distance(x, PointCloud(x.points, [0.5, 0.25, 0.25]))


def test_w2_basics(rng):
    x = PointCloud(rng.standard_normal((6, 2)))
    val, plan = w2_distance(x, x)
    assert val == 0.0 and list(plan.perm) == list(range(6))
    val, _ = w2_distance(PointCloud(np.array([[0.0, 0.0]])), PointCloud(np.array([[3.0, 4.0]])))
    assert val == 5.0


def test_w2_matches_enumeration(rng):
    x = PointCloud(rng.standard_normal((6, 2)))
    y = PointCloud(rng.standard_normal((6, 2)))
    cost = ((x.points[:, None] - y.points[None]) ** 2).sum(-1)
    val, _ = w2_distance(x, y)
    assert val**2 == pytest.approx(_enumerate(cost), abs=1e-12)


def test_w2_metric_properties(rng):
    for _ in range(20):
        a, b, c = (PointCloud(rng.standard_normal((6, 2))) for _ in range(3))
        ab, _ = w2_distance(a, b)
        ba, _ = w2_distance(b, a)
        assert ab == pytest.approx(ba, abs=1e-12)
        assert w2_distance(a, c)[0] <= ab + w2_distance(b, c)[0] + 1e-9
