"""The mobility operator ``L_{A,mu}`` on vector fields over a point cloud.

For a field ``v`` sampled at the support points,

    L[v](x_i) = 2 (A v_i + M_v x_i),   M_v = sum_j w_j x_j v_j^T.

With ``A = Sigma_mu`` the operator is self-adjoint and PSD in ``L^2(mu)``,
annihilates rigid rotation fields ``v(x) = S x`` (``S`` skew), and maps the
invariant space of fields with symmetric moment ``sum_i w_i x_i v_i^T`` into
itself. Its inverse on that space comes from a Sylvester equation.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .cloud import covariance, is_symmetric, moment_matrix
from .errors import SingularityError, SizeGuardError

SINGULAR_TOL = 1e-10
COND_WARN = 1e12
MAX_SYLVESTER_D = 8
OPERATOR_MATRIX_MAX = 2000
SPECTRUM_MAX = 500


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class OperatorContext:
    """Cloud, symmetric parameter ``A`` (defaults to the covariance) and cached covariance."""

    cloud: object
    A: np.ndarray = None
    sigma: np.ndarray = field(default=None, init=False)

    def __post_init__(self):
        sigma = covariance(self.cloud)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        a = sigma if self.A is None else np.array(self.A, dtype=np.float64)
        if a.shape != sigma.shape:
            raise ValueError(f"A has shape {a.shape}, expected {sigma.shape}")
        if not is_symmetric(a, 1e-10):
            raise ValueError("A must be symmetric")
        if a is not sigma:
            a.setflags(write=False)
        object.__setattr__(self, "A", a)

    @property
    def a_is_sigma(self):
        return self.A is self.sigma or bool(np.array_equal(self.A, self.sigma))


def _check_field(ctx_cloud, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != ctx_cloud.points.shape:
        raise ValueError(f"field shape {v.shape} does not match cloud {ctx_cloud.points.shape}")
    return v


def apply(ctx, v):
    """Evaluate ``L_{A,mu}[v]`` at the support points."""
    v = _check_field(ctx.cloud, v)
    m = moment_matrix(ctx.cloud, v)
    return 2.0 * (v @ ctx.A.T + ctx.cloud.points @ m.T)


def _min_abs_eig(m):
    return float(np.min(np.abs(np.linalg.eigvalsh(0.5 * (m + m.T)))))


def _require_nonsingular(m, name):
    lam = _min_abs_eig(m)
    if lam <= SINGULAR_TOL:
        raise SingularityError(f"{name} is singular: smallest |eigenvalue| = {lam:.3e}", eigenvalue=lam)
    return lam


def sylvester_system(a, s):
    """Matrix of ``B -> A B + B S`` acting on column-major ``vec(B)``."""
    d = a.shape[0]
    eye = np.eye(d)
    return np.kron(eye, a) + np.kron(s.T, eye)


def sylvester_solve(a, s, rhs, return_cond=False):
    """Solve ``A B + B S = rhs`` through the dense ``d^2 x d^2`` Kronecker system."""
    a = np.asarray(a, dtype=np.float64)
    d = a.shape[0]
    if d > MAX_SYLVESTER_D:
        raise SizeGuardError(f"Kronecker Sylvester solve limited to d <= {MAX_SYLVESTER_D}, got {d}")
    k = sylvester_system(a, np.asarray(s, dtype=np.float64))
    vec = np.linalg.solve(k, np.asarray(rhs, dtype=np.float64).reshape(-1, order="F"))
    b = vec.reshape(d, d, order="F")
    if return_cond:
        return b, float(np.linalg.cond(k))
    return b


def project_invariant(cloud, v, sigma=None):
    """Move ``v`` along the kernel of ``L_{Sigma,mu}`` into the invariant space.

    Returns ``v + S x`` with ``S`` skew solving ``Sigma S + S Sigma = M - M^T``,
    ``M = sum_i w_i x_i v_i^T``. The result has a symmetric moment matrix and
    the same image under ``L_{Sigma,mu}``. A field whose moment is already
    symmetric is returned unchanged.
    """
    v = _check_field(cloud, v)
    sigma = covariance(cloud) if sigma is None else sigma
    m = moment_matrix(cloud, v)
    skew = m - m.T
    if np.max(np.abs(skew), initial=0.0) <= 1e-14 * max(np.max(np.abs(m), initial=0.0), 1e-300):
        return v
    _require_nonsingular(sigma, "covariance")
    s = sylvester_solve(sigma, sigma, skew)
    s = 0.5 * (s - s.T)
    return v + cloud.points @ s.T


def is_invariant(cloud, v, tol=1e-10):
    m = moment_matrix(cloud, v)
    return bool(np.max(np.abs(m - m.T), initial=0.0) <= tol * max(1.0, np.max(np.abs(m), initial=0.0)))


@dataclass
class InverseInfo:
    projected: bool
    condition: float
    ill_conditioned: bool
    residual: float
    B: np.ndarray


def inverse(ctx, w, return_info=False):
    """Principal inverse ``v = L_{A,mu}^{-1}[w]``.

    Solves ``A B + B Sigma = (1/2) sum_i w_i w(x_i) x_i^T`` and returns
    ``v(x) = (1/2) A^{-1} w(x) - A^{-1} B x``. When ``A = Sigma`` and the
    moment of ``w`` is not symmetric, ``w`` is first projected onto the
    invariant space (recorded in the info). The inverse is exact for
    ``A = Sigma`` on the invariant space; ``info.residual`` reports the
    relative residual of ``L[v] = w`` in every case.

    Parameters
    ----------
    ctx : OperatorContext
    w : ndarray, shape (n, d)
    return_info : bool
        Also return an :class:`InverseInfo`.
    """
    w = _check_field(ctx.cloud, w)
    _require_nonsingular(ctx.A, "A")
    _require_nonsingular(ctx.sigma, "covariance")
    projected = False
    if ctx.a_is_sigma and not is_invariant(ctx.cloud, w):
        w = project_invariant(ctx.cloud, w, ctx.sigma)
        projected = True
    rhs = 0.5 * moment_matrix(ctx.cloud, w).T
    b, cond = sylvester_solve(ctx.A, ctx.sigma, rhs, return_cond=True)
    ill = cond > COND_WARN
    if ill:
        warnings.warn(f"Sylvester system condition number {cond:.3e} exceeds {COND_WARN:.0e}", IllConditionedWarning, stacklevel=2)
    a_inv = np.linalg.inv(ctx.A)
    v = (0.5 * w - ctx.cloud.points @ b.T) @ a_inv.T
    if not return_info:
        return v
    wn = float(np.linalg.norm(w))
    res = float(np.linalg.norm(apply(ctx, v) - w)) / wn if wn > 0 else 0.0
    return v, InverseInfo(projected, cond, ill, res, b)


def operator_matrix(ctx):
    """Dense ``(n d) x (n d)`` matrix of ``L`` on row-major flattened fields."""
    x = ctx.cloud.points
    w = ctx.cloud.weights
    n, d = x.shape
    if n * d > OPERATOR_MATRIX_MAX:
        raise SizeGuardError(f"operator_matrix limited to n*d <= {OPERATOR_MATRIX_MAX}, got {n * d}")
    # block (i, j) = 2 A delta_ij + 2 w_j x_j x_i^T
    blocks = 2.0 * np.einsum("j,ja,ib->iajb", w, x, x)
    mat = blocks.reshape(n * d, n * d)
    mat += np.kron(np.eye(n), 2.0 * ctx.A)
    return mat


def invariant_constraints(cloud):
    """Rows ``c`` with ``c @ v.ravel() = (M_v - M_v^T)[a, b]`` for ``a < b``."""
    x = cloud.points
    w = cloud.weights
    n, d = x.shape
    rows = []
    for a in range(d):
        for b in range(a + 1, d):
            r = np.zeros((n, d))
            r[:, b] += w * x[:, a]
            r[:, a] -= w * x[:, b]
            rows.append(r.ravel())
    return np.array(rows).reshape(-1, n * d)


def predicted_spectrum(sigma):
    """``2 (Lambda U {lambda_i + lambda_j, i <= j})`` as a sorted array."""
    lam = np.linalg.eigvalsh(sigma)
    d = lam.shape[0]
    pairs = [lam[i] + lam[j] for i in range(d) for j in range(i, d)]
    return np.sort(2.0 * np.concatenate([lam, pairs]))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    predicted: np.ndarray
    max_deviation: float
    ok: bool
    skipped: bool = False
    notice: str = ""


def spectrum_check(cloud, tol=1e-6):
    """Compare the spectrum of ``L_{Sigma,mu}`` restricted to the invariant space with its prediction."""
    n, d = cloud.points.shape
    if n == 1:
        return SpectrumReport(np.array([]), np.array([]), 0.0, True, True, "single-point cloud: invariant space is degenerate, check skipped")
    if n * d > SPECTRUM_MAX:
        raise SizeGuardError(f"spectrum_check limited to n*d <= {SPECTRUM_MAX}, got {n * d}")
    ctx = OperatorContext(cloud)
    _require_nonsingular(ctx.sigma, "covariance")
    mat = operator_matrix(ctx)
    wdiag = np.repeat(cloud.weights, d)
    cons = invariant_constraints(cloud)
    z = null_space(cons) if cons.shape[0] else np.eye(n * d)
    # W-orthonormalise the basis so the restricted operator is symmetric
    g = z.T @ (wdiag[:, None] * z)
    gl, gv = np.linalg.eigh(g)
    basis = z @ (gv / np.sqrt(gl)) @ gv.T
    red = basis.T @ (wdiag[:, None] * (mat @ basis))
    eig = np.linalg.eigvalsh(0.5 * (red + red.T))
    pred = predicted_spectrum(ctx.sigma)
    scale = max(1.0, float(np.max(np.abs(eig))))
    nonzero = eig[np.abs(eig) > 1e-9 * scale]
    dev = np.min(np.abs(nonzero[:, None] - pred[None, :]), axis=1) if nonzero.size else np.zeros(0)
    max_dev = float(dev.max()) if dev.size else 0.0
    return SpectrumReport(eig, pred, max_dev, max_dev <= tol)
