"""Hot numeric kernels with a numba path and a numpy/scipy path.

Every public kernel dispatches on :data:`USE_NUMBA` at call time. The loop
implementations are written in the numba-compatible subset; the fallbacks
are vectorised numpy (or scipy for the assignment problem). Both paths are
deterministic: loops reduce in index order.
"""

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._accel import NUMBA_ENABLED, maybe_njit

USE_NUMBA = NUMBA_ENABLED


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# linear assignment


def _hungarian_loops(cost):
    # shortest augmenting path with row/column potentials, 1-based internals
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = np.inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


_hungarian_nb = maybe_njit(_hungarian_loops)


def _assignment_numpy(cost):
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def assignment(cost):
    """Return the permutation ``perm`` minimising ``sum(cost[i, perm[i]])``."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if USE_NUMBA:
        return _hungarian_nb(cost)
    return _assignment_numpy(cost)


# ---------------------------------------------------------------------------
# exhaustive permutation search for the IGW oracle


def _best_perm_loops(gram):
    # gram[i, j, :] = flattened x_i y_j^T / n; maximise ||sum_i gram[i, perm[i]]||^2
    n = gram.shape[0]
    m = gram.shape[2]
    perm = np.arange(n)
    best = np.arange(n)
    acc = np.zeros(m)
    best_val = -1.0
    count = 0
    while True:
        for k in range(m):
            acc[k] = 0.0
        for i in range(n):
            for k in range(m):
                acc[k] += gram[i, perm[i], k]
        val = 0.0
        for k in range(m):
            val += acc[k] * acc[k]
        count += 1
        if val > best_val:
            best_val = val
            for i in range(n):
                best[i] = perm[i]
        # next permutation in lexicographic order
        i = n - 2
        while i >= 0 and perm[i] >= perm[i + 1]:
            i -= 1
        if i < 0:
            break
        j = n - 1
        while perm[j] <= perm[i]:
            j -= 1
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        lo = i + 1
        hi = n - 1
        while lo < hi:
            tmp = perm[lo]
            perm[lo] = perm[hi]
            perm[hi] = tmp
            lo += 1
            hi -= 1
    return best, best_val, count


_best_perm_nb = maybe_njit(_best_perm_loops)


def _best_perm_numpy(gram, chunk=40320):
    n = gram.shape[0]
    rows = np.arange(n)
    best_val = -1.0
    best = np.arange(n)
    count = 0
    it = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        block = block.reshape(-1, n)
        acc = gram[rows, block].sum(axis=1)
        vals = np.einsum("pk,pk->p", acc, acc)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best = block[k].copy()
        count += block.shape[0]
    return best, best_val, count


def best_permutation(gram):
    """Exhaustively maximise the squared Frobenius norm of a permuted sum.

    ``gram`` has shape ``(n, n, m)``. Returns ``(perm, value, n_visited)``;
    the first maximiser in lexicographic order wins.
    """
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    if USE_NUMBA:
        perm, val, count = _best_perm_nb(gram)
        return perm, float(val), int(count)
    return _best_perm_numpy(gram)


def _swap_polish_loops(x, y, perm, rel_tol):
    # best-improvement pairwise swaps that increase |C|_F^2, C = x^T y[perm] / n
    n, d = x.shape
    perm = perm.copy()
    c = np.zeros((d, d))
    for i in range(n):
        for a in range(d):
            for b in range(d):
                c[a, b] += x[i, a] * y[perm[i], b] / n
    dx = np.empty(d)
    dy = np.empty(d)
    while True:
        norm2 = 0.0
        for a in range(d):
            for b in range(d):
                norm2 += c[a, b] * c[a, b]
        best_gain = rel_tol * norm2
        bi = -1
        bj = -1
        for i in range(n):
            for j in range(i + 1, n):
                nx = 0.0
                ny = 0.0
                for a in range(d):
                    dx[a] = x[i, a] - x[j, a]
                    dy[a] = y[perm[j], a] - y[perm[i], a]
                    nx += dx[a] * dx[a]
                    ny += dy[a] * dy[a]
                cross = 0.0
                for a in range(d):
                    for b in range(d):
                        cross += dx[a] * c[a, b] * dy[b]
                gain = 2.0 * cross / n + nx * ny / (n * n)
                if gain > best_gain:
                    best_gain = gain
                    bi = i
                    bj = j
        if bi < 0:
            break
        for a in range(d):
            for b in range(d):
                c[a, b] += (x[bi, a] - x[bj, a]) * (y[perm[bj], b] - y[perm[bi], b]) / n
        tmp = perm[bi]
        perm[bi] = perm[bj]
        perm[bj] = tmp
    return perm


_swap_polish_nb = maybe_njit(_swap_polish_loops)


def _swap_polish_numpy(x, y, perm, rel_tol):
    n = x.shape[0]
    perm = perm.copy()
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    while True:
        yp = y[perm]
        c = x.T @ yp / n
        dx = x[:, None, :] - x[None, :, :]
        dy = yp[None, :, :] - yp[:, None, :]
        cross = np.einsum("ija,ab,ijb->ij", dx, c, dy)
        gain = 2.0 * cross / n + np.einsum("ija,ija->ij", dx, dx) * np.einsum("ija,ija->ij", dy, dy) / (n * n)
        gain = np.where(upper, gain, -np.inf)
        k = int(np.argmax(gain))
        if not gain.flat[k] > rel_tol * np.sum(c * c):
            break
        i, j = divmod(k, n)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def swap_polish(x, y, perm, rel_tol=1e-13):
    """Local search over transpositions maximising ``|x^T y[perm]|_F^2``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    perm = np.ascontiguousarray(perm, dtype=np.int64)
    if USE_NUMBA:
        return _swap_polish_nb(x, y, perm, float(rel_tol))
    return _swap_polish_numpy(x, y, perm, float(rel_tol))


# ---------------------------------------------------------------------------
# pairwise surrogates


def _coulomb_loops(x, eps):
    n, d = x.shape
    logsum = 0.0
    grad = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            r2 = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                r2 += diff * diff
            den = eps + r2
            logsum += math.log(den)
            for k in range(d):
                grad[i, k] += (x[i, k] - x[j, k]) / den
    return logsum, grad


_coulomb_nb = maybe_njit(_coulomb_loops)


def _coulomb_numpy(x, eps):
    diff = x[:, None, :] - x[None, :, :]
    den = eps + np.einsum("ijk,ijk->ij", diff, diff)
    off = ~np.eye(x.shape[0], dtype=bool)
    logsum = float(np.log(den[off]).sum())
    inv = np.where(off, 1.0 / den, 0.0)
    grad = np.einsum("ij,ijk->ik", inv, diff)
    return logsum, grad


def coulomb_terms(x, eps):
    """``sum_{i!=j} log(eps + |x_i-x_j|^2)`` and rows ``sum_{j!=i} (x_i-x_j)/(eps+|x_i-x_j|^2)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        logsum, grad = _coulomb_nb(x, float(eps))
        return float(logsum), grad
    return _coulomb_numpy(x, float(eps))


def _nearest_loops(x):
    n, d = x.shape
    idx = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n)
    for i in range(n):
        best = np.inf
        bj = -1
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                r2 += diff * diff
            if r2 < best:
                best = r2
                bj = j
        idx[i] = bj
        dist2[i] = best
    return idx, dist2


_nearest_nb = maybe_njit(_nearest_loops)


def _nearest_numpy(x):
    diff = x[:, None, :] - x[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    idx = np.argmin(d2, axis=1)
    return idx.astype(np.int64), d2[np.arange(x.shape[0]), idx]


def nearest_neighbours(x):
    """Index of and squared distance to each point's nearest other point (ties: lowest index)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return _nearest_nb(x)
    return _nearest_numpy(x)


# ---------------------------------------------------------------------------
# Gaussian kernel sums for MMD


def _gauss_loops(a, wa, b, wb, inv2h2, want_grad):
    na, d = a.shape
    nb = b.shape[0]
    nh = inv2h2.shape[0]
    total = 0.0
    grad = np.zeros((na, d))
    for i in range(na):
        row = 0.0
        for j in range(nb):
            r2 = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                r2 += diff * diff
            kv = 0.0
            dk = 0.0
            for h in range(nh):
                e = math.exp(-r2 * inv2h2[h])
                kv += e
                dk += e * inv2h2[h]
            row += wb[j] * kv
            if want_grad:
                # d/da_i exp(-r2 c) = -2 c (a_i - b_j) exp(-r2 c)
                coef = -2.0 * wa[i] * wb[j] * dk
                for k in range(d):
                    grad[i, k] += coef * (a[i, k] - b[j, k])
        total += wa[i] * row
    return total, grad


_gauss_nb = maybe_njit(_gauss_loops)


def _gauss_numpy(a, wa, b, wb, inv2h2, want_grad):
    diff = a[:, None, :] - b[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    e = np.exp(-r2[:, :, None] * inv2h2[None, None, :])
    kmat = e.sum(axis=2)
    total = float(wa @ kmat @ wb)
    if not want_grad:
        return total, np.zeros_like(a)
    dk = e @ inv2h2
    coef = -2.0 * wa[:, None] * wb[None, :] * dk
    grad = np.einsum("ij,ijk->ik", coef, diff)
    return total, grad


def gaussian_kernel_sum(a, wa, b, wb, bandwidths, want_grad=False):
    """``sum_ij wa_i wb_j sum_h exp(-|a_i-b_j|^2 / (2 h^2))`` and its gradient in ``a``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    wa = np.ascontiguousarray(wa, dtype=np.float64)
    wb = np.ascontiguousarray(wb, dtype=np.float64)
    h = np.asarray(bandwidths, dtype=np.float64)
    inv2h2 = 1.0 / (2.0 * h * h)
    if USE_NUMBA:
        total, grad = _gauss_nb(a, wa, b, wb, inv2h2, bool(want_grad))
        return float(total), grad
    return _gauss_numpy(a, wa, b, wb, inv2h2, bool(want_grad))
