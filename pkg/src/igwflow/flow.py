"""IGW and Wasserstein gradient flows of point clouds.

The IGW gradient of a functional is the inverse mobility operator applied to
its Wasserstein gradient, ``grad_IGW F = L_{Sigma,mu}^{-1}[grad_W F]``.
:func:`euler_flow` integrates ``dx/dt = -grad F`` with explicit Euler steps;
:func:`jko_step` and :func:`jko_flow` implement the implicit minimising
movement ``argmin F(rho) + IGW(rho, rho_i)^2 / (2 tau)`` over particle
positions followed by the PSD rotation.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cloud import Coupling, PointCloud, apply_linear, covariance, cross_covariance, l2_inner
from .errors import FlowDegenerateError, InnerSolverDivergence, NonFiniteError
from .functionals import Functional
from .igw import _run_alternating, f1_term, igw_alternating, psd_rotation
from .mobility import OperatorContext, inverse, project_invariant

log = logging.getLogger(__name__)

GEOMETRIES = ("igw", "wasserstein")


@dataclass
class FlowConfig:
    geometry: str = "igw"
    tau: float = 0.01
    steps: int = 100
    functional: Functional = field(default_factory=Functional)
    singularity_floor: float = 1e-8
    emit_velocity: bool = False

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}; choose from {', '.join(GEOMETRIES)}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


def lambda_min(cloud):
    return float(np.linalg.eigvalsh(covariance(cloud)).min())


@dataclass
class IGWGradientParts:
    grad_w: np.ndarray
    grad_w_projected: np.ndarray
    grad_igw: np.ndarray
    sigma: np.ndarray
    B: np.ndarray
    lambda_min: float


def igw_gradient_parts(f, cloud, floor=1e-8):
    sigma = covariance(cloud)
    lam = float(np.linalg.eigvalsh(sigma).min())
    if not lam >= floor:
        raise FlowDegenerateError(f"covariance smallest eigenvalue {lam:.3e} below floor {floor:.1e}", eigenvalue=lam)
    g = np.asarray(f.gradient(cloud), dtype=np.float64)
    gp = project_invariant(cloud, g, sigma)
    v, info = inverse(OperatorContext(cloud), gp, return_info=True)
    return IGWGradientParts(g, gp, v, sigma, info.B, lam)


def igw_gradient(f, cloud, floor=1e-8):
    """``L_{Sigma,mu}^{-1}`` applied to the (invariant-projected) Wasserstein gradient."""
    return igw_gradient_parts(f, cloud, floor).grad_igw


def _descent_damping_from(parts, cloud):
    gp = parts.grad_w_projected
    sigma = parts.sigma
    descent = -0.5 * l2_inner(cloud, gp, np.linalg.solve(sigma, gp.T).T)
    gm = (gp.T * cloud.weights) @ cloud.points
    d = sigma.shape[0]
    eye = np.eye(d)
    kmat = np.kron(eye, sigma @ sigma) + np.kron(sigma, sigma)
    vec = gm.reshape(-1, order="F")
    damping = 0.5 * float(vec @ np.linalg.solve(kmat, vec))
    total = -l2_inner(cloud, parts.grad_w, parts.grad_igw)
    return descent, damping, total


def descent_damping(f, cloud, floor=1e-8):
    """Split ``dF/dt`` along the IGW flow into its descent and damping parts.

    Returns ``(descent, damping, total)`` with

    * ``descent = -<g, Sigma^{-1} g / 2>``,
    * ``damping = vec(G)^T (I kron Sigma^2 + Sigma kron Sigma)^{-1} vec(G) / 2``,
      ``G = sum_i w_i g_i x_i^T``,
    * ``total = -<grad_W F, grad_IGW F>``,

    where ``g`` is the invariant-space projection of the Wasserstein gradient.
    ``descent + damping = total`` up to round-off.
    """
    parts = igw_gradient_parts(f, cloud, floor)
    return _descent_damping_from(parts, cloud)


def _finite_or_raise(x, what, state=None):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}", state=state)


def euler_flow(cfg, cloud0):
    """Explicit Euler integration ``x <- x + tau v`` with ``v = -grad F``.

    Every frame records ``F``, ``descent``, ``damping``, ``total`` and
    ``lambda_min`` (smallest covariance eigenvalue). For IGW geometry the
    run stops at the first frame whose ``lambda_min`` falls below
    ``cfg.singularity_floor``; that frame is kept and ``stop_reason`` is set.
    For Wasserstein geometry ``descent = -|g|^2`` and ``damping = 0``.
    """
    from .trajectory import Frame, Trajectory

    f = cfg.functional
    traj = Trajectory(tau=cfg.tau, meta={"geometry": cfg.geometry, "functional": getattr(f, "kind", "custom")})
    cloud = cloud0
    for j in range(cfg.steps + 1):
        t = j * cfg.tau
        fval = float(f.value(cloud))
        lam = lambda_min(cloud)
        scal = {"F": fval, "lambda_min": lam}
        if cfg.geometry == "igw":
            if not lam >= cfg.singularity_floor:
                scal.update(descent=math.nan, damping=math.nan, total=math.nan)
                traj.append(Frame(t, cloud, None, scal))
                traj.stop_reason = f"covariance singular at t={t:.6g}: lambda_min={lam:.3e} < floor {cfg.singularity_floor:.1e}"
                log.warning(traj.stop_reason)
                return traj
            parts = igw_gradient_parts(f, cloud, cfg.singularity_floor)
            descent, damping, total = _descent_damping_from(parts, cloud)
            v = -parts.grad_igw
        else:
            g = np.asarray(f.gradient(cloud), dtype=np.float64)
            descent = -l2_inner(cloud, g, g)
            damping, total = 0.0, descent
            v = -g
        _finite_or_raise(v, f"velocity at t={t}", state=cloud)
        scal.update(descent=descent, damping=damping, total=total)
        traj.append(Frame(t, cloud, v if cfg.emit_velocity else None, scal))
        if j == cfg.steps:
            break
        new_pts = cloud.points + cfg.tau * v
        _finite_or_raise(new_pts, f"state after step {j + 1}", state=cloud)
        cloud = cloud.with_points(new_pts)
    return traj


# ---------------------------------------------------------------------------
# minimising movement


@dataclass
class JKODiagnostics:
    F_before: float
    F_after: float
    igw2_step: float
    step_margin: float
    step_inequality_ok: bool
    crosscov_min_eig: float
    crosscov_asymmetry: float
    crosscov_psd: bool
    rotation: np.ndarray
    iterations: int
    replans: int
    lr_final: float
    surrogate_history: list
    inner_solver: str = "gradient descent on particle positions with envelope gradient of IGW^2, backtracking"


def _penalty(xp, y, sigma_y_sq, a, perm, w):
    sx = (xp.T * w) @ xp
    return float(np.sum(sx * sx) + sigma_y_sq + 8.0 * np.sum(a * a) - 8.0 * np.sum(w * np.einsum("ij,ij->i", xp @ a, y[perm])))


def jko_step(f, cloud_i, tau, lr=None, iters=500, replan_every=10, restarts=8, seed=0, divergence_patience=10):
    """One minimising-movement step.

    Minimises ``F(X) + P(X) / (2 tau)`` over particle positions ``X`` by
    gradient descent, where ``P`` is the dual-form upper bound on
    ``IGW(X, rho_i)^2`` for a dual matrix ``A`` and plan ``pi`` held fixed
    between replans. Its gradient in ``x_k`` is ``w_k (4 Sigma_X x_k - 8 A
    y_{pi(k)})``. The plan is replanned every ``replan_every`` iterations
    by the alternating solver warm-started at the current ``A``; a step that
    raises the objective is retried with half the learning rate. The result
    is rotated by the PSD rotation relative to ``rho_i``.

    Returns ``(cloud_next, JKODiagnostics)``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    lr = 0.1 * tau if lr is None else float(lr)
    y = np.array(cloud_i.points)
    w = cloud_i.weights
    n = cloud_i.n
    sy = covariance(cloud_i)
    sy2 = float(np.sum(sy * sy))
    x = y.copy()
    perm = np.arange(n)
    a = 0.5 * sy
    f_before = float(f.value(cloud_i))

    def objective(pts):
        return float(f.value(cloud_i.with_points(pts))) + _penalty(pts, y, sy2, a, perm, w) / (2.0 * tau)

    def replan(pts):
        cur = PointCloud(pts, w)
        plan, a_new, obj, _, _, _ = _run_alternating(cur, cloud_i, a, 200, 1e-12, True)
        return np.array(plan.perm), a_new

    obj = objective(x)
    history = [obj]
    rises = 0
    replans = 0
    it = 0
    for it in range(1, iters + 1):
        cur = cloud_i.with_points(x)
        g = np.asarray(f.gradient(cur), dtype=np.float64)
        sx = (x.T * w) @ x
        g = g + (4.0 * x @ sx - 8.0 * y[perm] @ a) / (2.0 * tau)
        _finite_or_raise(g, f"inner gradient at iteration {it}", state=cur)
        for _ in range(40):
            trial = x - lr * g
            t_obj = objective(trial)
            if t_obj <= obj:
                break
            lr *= 0.5
        else:
            trial, t_obj = x, obj
        x, obj = trial, t_obj
        if it % replan_every == 0:
            perm, a = replan(x)
            new_obj = objective(x)
            replans += 1
            rises = rises + 1 if new_obj > history[-1] else 0
            history.append(new_obj)
            obj = new_obj
            if rises >= divergence_patience:
                raise InnerSolverDivergence(
                    f"inner objective rose for {rises} consecutive replans", last_iterate=cloud_i.with_points(x)
                )
    # final plan between the moved cloud and rho_i, then align
    moved = cloud_i.with_points(x)
    perm, a = replan(x)
    plan_moved = Coupling.from_permutation(perm, w, w)
    fresh = igw_alternating(moved, cloud_i, restarts=restarts, seed=seed)
    if fresh.igw_squared < f1_term(moved, cloud_i) - 2.0 * np.sum(cross_covariance(moved, cloud_i, plan_moved) ** 2):
        plan_moved = fresh.coupling
    plan = plan_moved.transpose()  # couples rho_i -> moved
    o = psd_rotation(cloud_i, moved, plan)
    nxt = apply_linear(moved, o)
    c = cross_covariance(cloud_i, nxt, plan)
    sym = 0.5 * (c + c.T)
    min_eig = float(np.linalg.eigvalsh(sym).min())
    asym = float(np.max(np.abs(c - c.T)))
    igw2 = max(f1_term(cloud_i, nxt) - 2.0 * float(np.sum(c * c)), 0.0)
    f_after = float(f.value(nxt))
    margin = 2.0 * tau * (f_before - f_after) + 1e-8 - igw2
    diag = JKODiagnostics(
        F_before=f_before,
        F_after=f_after,
        igw2_step=igw2,
        step_margin=margin,
        step_inequality_ok=margin >= 0,
        crosscov_min_eig=min_eig,
        crosscov_asymmetry=asym,
        crosscov_psd=min_eig >= -1e-8 and asym <= 1e-8,
        rotation=o,
        iterations=it,
        replans=replans,
        lr_final=lr,
        surrogate_history=history,
    )
    return nxt, diag


def jko_flow(f, cloud0, tau, n_steps, **inner):
    """Iterate :func:`jko_step`; frame scalars carry the per-step diagnostics."""
    from .trajectory import Frame, Trajectory

    traj = Trajectory(tau=tau, meta={"scheme": "jko", "functional": getattr(f, "kind", "custom")})
    cloud = cloud0
    traj.append(Frame(0.0, cloud, None, {"F": float(f.value(cloud)), "lambda_min": lambda_min(cloud)}))
    for i in range(1, n_steps + 1):
        cloud, d = jko_step(f, cloud, tau, **inner)
        traj.append(
            Frame(
                i * tau,
                cloud,
                None,
                {
                    "F": d.F_after,
                    "lambda_min": lambda_min(cloud),
                    "step_igw": math.sqrt(d.igw2_step),
                    "step_margin": d.step_margin,
                    "crosscov_min_eig": d.crosscov_min_eig,
                    "crosscov_asymmetry": d.crosscov_asymmetry,
                },
            )
        )
    return traj
