"""Exact discrete optimal transport between equal-size uniform clouds."""

import numpy as np

from . import kernels
from .cloud import Coupling
from .errors import UnsupportedMarginalsError

__all__ = ["Coupling", "solve_assignment", "solve_ot_bilinear", "w2_distance", "require_uniform_pair"]


def require_uniform_pair(x, y):
    if x.n != y.n:
        raise UnsupportedMarginalsError(f"clouds must have equal size, got {x.n} and {y.n}")
    if x.d != y.d:
        raise UnsupportedMarginalsError(f"clouds must share a dimension, got {x.d} and {y.d}")
    if not (x.is_uniform and y.is_uniform):
        raise UnsupportedMarginalsError("the assignment solver requires uniform weights")


def solve_assignment(cost):
    """Minimum-cost perfect matching.

    Returns ``(perm, value)`` where ``perm[i]`` is the column matched to
    row ``i`` and ``value`` is the mean matched cost (the transport cost
    under uniform weights). When the identity permutation is among the
    optima it is returned, which makes plans between identical clouds
    and all-zero costs reproducible.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        raise ValueError("empty cost matrix")
    perm = kernels.assignment(cost)
    rows = np.arange(n)
    total = cost[rows, perm].sum()
    ident = np.trace(cost)
    if ident <= total:
        perm, total = rows.copy(), ident
    return perm, float(total) / n


def solve_ot_bilinear(x, y, a):
    """Optimal plan for the cost ``c(x, y) = -8 x^T A y``; returns ``(Coupling, value)``."""
    require_uniform_pair(x, y)
    a = np.asarray(a, dtype=np.float64)
    cost = -8.0 * (x.points @ a @ y.points.T)
    perm, value = solve_assignment(cost)
    return Coupling.from_permutation(perm, x.weights, y.weights), value


def sq_dist_matrix(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def w2_distance(x, y):
    """2-Wasserstein distance by exact assignment; returns ``(value, Coupling)``."""
    require_uniform_pair(x, y)
    perm, value = solve_assignment(sq_dist_matrix(x.points, y.points))
    return float(np.sqrt(max(value, 0.0))), Coupling.from_permutation(perm, x.weights, y.weights)
