"""Point clouds, couplings, moments, linear transforms and benchmark shapes."""

from dataclasses import dataclass

import numpy as np

from .errors import CouplingError

WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Weighted finite support of a probability measure on R^d.

    ``points`` is ``(n, d)``; ``weights`` defaults to uniform ``1/n``.
    Both arrays are stored read-only.
    """

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be a non-empty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"expected {n} weights, got {w.shape[0]}")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def with_points(self, points):
        return PointCloud(points, self.weights)

    def __repr__(self):
        return f"PointCloud(n={self.n}, d={self.d}, uniform={self.is_uniform})"


# ---------------------------------------------------------------------------
# square-matrix predicates


def is_symmetric(m, tol=1e-10):
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and bool(np.max(np.abs(m - m.T), initial=0.0) <= tol)


def is_psd(m, tol=1e-10):
    m = np.asarray(m)
    if not is_symmetric(m, tol):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (m + m.T)).min() >= -tol)


def is_orthogonal(m, tol=1e-10):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.max(np.abs(m.T @ m - np.eye(m.shape[0]))) <= tol)


def rotation_2d(degrees):
    th = np.deg2rad(degrees)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s], [s, c]])


def reflection(d):
    """The fixed reflection diag(-1, 1, ..., 1)."""
    r = np.eye(d)
    r[0, 0] = -1.0
    return r


def random_orthogonal(d, rng, det=None):
    """Haar-distributed orthogonal matrix; ``det=+1/-1`` fixes the component."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if det is not None and np.sign(np.linalg.det(q)) != det:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# couplings


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between two clouds, stored as a permutation or a dense matrix."""

    source_weights: np.ndarray
    target_weights: np.ndarray
    perm: np.ndarray = None
    matrix: np.ndarray = None

    def __post_init__(self):
        if (self.perm is None) == (self.matrix is None):
            raise ValueError("give exactly one of perm or matrix")
        a = _frozen(self.source_weights)
        b = _frozen(self.target_weights)
        object.__setattr__(self, "source_weights", a)
        object.__setattr__(self, "target_weights", b)
        if self.perm is not None:
            p = np.array(self.perm, dtype=np.int64).reshape(-1)
            if p.shape[0] != a.shape[0] or a.shape[0] != b.shape[0]:
                raise CouplingError("permutation length does not match the marginals")
            if not np.array_equal(np.sort(p), np.arange(p.shape[0])):
                raise CouplingError("permutation is not a bijection")
            if np.max(np.abs(a - b[p])) > MARGINAL_TOL:
                raise CouplingError("permutation does not carry source weights onto target weights")
            p.setflags(write=False)
            object.__setattr__(self, "perm", p)
        else:
            m = _frozen(self.matrix)
            if m.shape != (a.shape[0], b.shape[0]):
                raise CouplingError(f"plan shape {m.shape} does not match marginals")
            if np.any(m < -MARGINAL_TOL):
                raise CouplingError("plan has negative entries")
            if np.max(np.abs(m.sum(axis=1) - a)) > MARGINAL_TOL or np.max(np.abs(m.sum(axis=0) - b)) > MARGINAL_TOL:
                raise CouplingError("plan marginals do not match the cloud weights")
            object.__setattr__(self, "matrix", m)

    @classmethod
    def from_permutation(cls, perm, source_weights=None, target_weights=None):
        perm = np.asarray(perm, dtype=np.int64)
        n = perm.shape[0]
        a = np.full(n, 1.0 / n) if source_weights is None else source_weights
        b = np.full(n, 1.0 / n) if target_weights is None else target_weights
        return cls(a, b, perm=perm)

    @classmethod
    def identity(cls, n):
        return cls.from_permutation(np.arange(n))

    @classmethod
    def product(cls, x, y):
        return cls(x.weights, y.weights, matrix=np.outer(x.weights, y.weights))

    @property
    def is_permutation(self):
        return self.perm is not None

    @property
    def shape(self):
        return (self.source_weights.shape[0], self.target_weights.shape[0])

    def dense(self):
        if self.matrix is not None:
            return np.array(self.matrix)
        m = np.zeros(self.shape)
        m[np.arange(self.shape[0]), self.perm] = self.source_weights
        return m

    def transpose(self):
        if self.perm is not None:
            inv = np.empty_like(self.perm)
            inv[self.perm] = np.arange(self.perm.shape[0])
            return Coupling(self.target_weights, self.source_weights, perm=inv)
        return Coupling(self.target_weights, self.source_weights, matrix=self.matrix.T)

    def check(self, x, y):
        """Raise :class:`CouplingError` unless this plan couples ``x`` and ``y``."""
        if self.shape != (x.n, y.n):
            raise CouplingError(f"plan of shape {self.shape} cannot couple clouds of sizes {x.n} and {y.n}")
        if np.max(np.abs(self.source_weights - x.weights)) > MARGINAL_TOL:
            raise CouplingError("source marginal does not match the first cloud")
        if np.max(np.abs(self.target_weights - y.weights)) > MARGINAL_TOL:
            raise CouplingError("target marginal does not match the second cloud")


# ---------------------------------------------------------------------------
# moments and transforms


def covariance(cloud):
    """Uncentred second-moment matrix ``sum_i w_i x_i x_i^T``."""
    x = cloud.points
    return (x.T * cloud.weights) @ x


def second_moment(cloud):
    return float(np.dot(cloud.weights, np.einsum("ij,ij->i", cloud.points, cloud.points)))


def cross_covariance(x, y, plan):
    """``sum_ij plan_ij x_i y_j^T``."""
    plan.check(x, y)
    if plan.perm is not None:
        return (x.points.T * plan.source_weights) @ y.points[plan.perm]
    return x.points.T @ plan.matrix @ y.points


def moment_matrix(cloud, field):
    """``sum_i w_i x_i v_i^T`` for a vector field given as an ``(n, d)`` array."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape != cloud.points.shape:
        raise ValueError(f"field shape {field.shape} does not match cloud {cloud.points.shape}")
    return (cloud.points.T * cloud.weights) @ field


def apply_linear(cloud, m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (cloud.d, cloud.d):
        raise ValueError(f"matrix of shape {m.shape} cannot act on {cloud.d}-dimensional points")
    return PointCloud(cloud.points @ m.T, cloud.weights)


def whiten(cloud):
    """Linear image of ``cloud`` whose (uncentred) covariance is the identity."""
    vals, vecs = np.linalg.eigh(covariance(cloud))
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    out = apply_linear(cloud, inv_sqrt)
    return out


def l2_inner(cloud, v, w):
    """``<v, w>_{L^2(mu)} = sum_i w_i <v_i, w_i>``."""
    return float(np.dot(cloud.weights, np.einsum("ij,ij->i", v, w)))


# ---------------------------------------------------------------------------
# benchmark shapes

SHAPES = ("ellipse", "square", "two_moons", "two_circles", "infinity")


def _ellipse(n, semi_axes=(2.0, 1.0)):
    th = 2 * np.pi * np.arange(n) / n
    a, b = semi_axes
    return np.column_stack([a * np.cos(th), b * np.sin(th)])


def _square(n, side=2.0):
    h = side / 2
    s = 4.0 * np.arange(n) / n
    seg = np.floor(s).astype(int)
    f = s - seg
    corners = np.array([[-h, -h], [h, -h], [h, h], [-h, h], [-h, -h]])
    return corners[seg] + f[:, None] * (corners[seg + 1] - corners[seg])


def _two_moons(n, scale=1.0):
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5])
    pts = np.vstack([outer, inner]) - np.array([0.5, 0.25])
    return scale * pts


def _two_circles(n, radius=1.0, factor=0.5):
    n_out = n // 2
    n_in = n - n_out
    t_out = 2 * np.pi * np.arange(n_out) / max(n_out, 1)
    t_in = 2 * np.pi * np.arange(n_in) / n_in
    outer = radius * np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = factor * radius * np.column_stack([np.cos(t_in), np.sin(t_in)])
    return np.vstack([outer, inner])


def _infinity(n, scale=1.5):
    t = 2 * np.pi * (np.arange(n) + 0.5) / n
    den = 1 + np.sin(t) ** 2
    return scale * np.column_stack([np.cos(t) / den, np.sin(t) * np.cos(t) / den])


_GENERATORS = {
    "ellipse": _ellipse,
    "square": _square,
    "two_moons": _two_moons,
    "two_circles": _two_circles,
    "infinity": _infinity,
}


def generate_shape(kind, n, seed=None, jitter=0.0, **params):
    """Uniform-weight 2-D cloud tracing a named shape.

    Points follow a fixed angular or arc-length parameterisation; ``jitter``
    adds seeded isotropic Gaussian noise of that standard deviation.
    Shape-specific keywords: ``semi_axes`` (ellipse), ``side`` (square),
    ``scale`` (two_moons, infinity), ``radius``/``factor`` (two_circles).
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown shape {kind!r}; choose from {', '.join(SHAPES)}")
    if n < 1:
        raise ValueError("n must be at least 1")
    pts = _GENERATORS[kind](int(n), **params)
    if jitter:
        rng = np.random.default_rng(seed)
        pts = pts + jitter * rng.standard_normal(pts.shape)
    return PointCloud(pts)
