"""IGW metric tensor, action, MMD, MLP velocity model and flow matching.

Flow matching trains a time-dependent velocity ``v(t, x)`` so that the
Euler rollout of a source cloud over ``k`` steps of size ``1/k`` lands on a
target cloud. The loss is

    (1/k) sum_{j<k} g_j(v_j, v_j) + lam * MMD(X_k, target),

with ``g`` the IGW metric tensor (or the plain ``L^2`` norm for the
Wasserstein comparison). Gradients are computed by hand-written reverse mode
through the discrete rollout.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .cloud import PointCloud, covariance, moment_matrix, reflection
from .errors import NonFiniteError, ParseError
from .io import atomic_write
from .trajectory import Frame, Trajectory

log = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS = (1e-4, 1e-3, 1e-2, 0.05, 0.25, 1.0, 4.0, 20.0, 100.0, 1000.0)
ACTION_GEOMETRIES = ("igw_action", "w2_action")


# ---------------------------------------------------------------------------
# metric tensor and action


def metric_tensor(cloud, v, w):
    """``g(v, w) = 2 sum_i w_i v_i^T Sigma w_i + 2 tr(M_v M_w)``."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != cloud.points.shape or w.shape != cloud.points.shape:
        raise ValueError("fields must match the cloud's shape")
    sigma = covariance(cloud)
    first = 2.0 * float(np.dot(cloud.weights, np.einsum("ij,ij->i", v @ sigma, w)))
    mv = moment_matrix(cloud, v)
    mw = moment_matrix(cloud, w)
    return first + 2.0 * float(np.sum(mv * mw.T))


def l2_energy(cloud, v):
    return float(np.dot(cloud.weights, np.einsum("ij,ij->i", v, v)))


def _frame_steps(traj):
    if len(traj) < 2:
        raise ValueError("action needs at least two frames")
    for j, fr in enumerate(traj.frames[:-1]):
        if fr.velocity is None:
            raise ValueError(f"frame {j} has no velocity")
    return np.diff(traj.times)


def action(traj, geometry="igw_action"):
    """Left-Riemann sum ``sum_{j<k} (t_{j+1} - t_j) g_j(v_j, v_j)``."""
    dts = _frame_steps(traj)
    total = 0.0
    for dt, fr in zip(dts, traj.frames[:-1]):
        if geometry == "igw_action":
            total += dt * metric_tensor(fr.cloud, fr.velocity, fr.velocity)
        else:
            total += dt * l2_energy(fr.cloud, fr.velocity)
    return float(total)


@dataclass
class ActionBound:
    igw_squared: float
    horizon: float
    action: float
    residual: float

    @property
    def rhs(self):
        return self.horizon * self.action + self.residual

    @property
    def ok(self):
        return self.igw_squared <= self.rhs + 1e-12 * max(1.0, self.rhs)


def action_bound(traj, restarts=8, seed=0):
    """Compare ``IGW(first, last)^2`` with ``T * action + residual``.

    Under the index plan between the first and last frames the Gram-matrix
    change splits as ``sum_j dt_j Dt_j + E`` with ``E = sum_j dt_j^2
    <v_j(i), v_j(i')>``. Cauchy-Schwarz bounds the first part by
    ``T * action``, so ``IGW^2 <= T * action + |E|^2 + 2 |sum_j dt_j Dt_j| |E|``
    in the ``w (x) w`` weighted Frobenius norm. ``E`` shrinks like ``1/k``.
    """
    from .igw import igw_alternating, igw_objective
    from .cloud import Coupling

    dts = _frame_steps(traj)
    first, last = traj.frames[0].cloud, traj.frames[-1].cloud
    ww = np.outer(first.weights, first.weights)
    e = np.zeros((first.n, first.n))
    dsum = np.zeros_like(e)
    for dt, fr in zip(dts, traj.frames[:-1]):
        x, v = fr.cloud.points, fr.velocity
        xv = v @ x.T
        dsum += dt * (xv + xv.T)
        e += dt * dt * (v @ v.T)
    en = math.sqrt(float(np.sum(ww * e * e)))
    dn = math.sqrt(float(np.sum(ww * dsum * dsum)))
    res = igw_alternating(first, last, restarts=restarts, seed=seed)
    ident = igw_objective(first, last, Coupling.identity(first.n)) if first.is_uniform else math.inf
    igw2 = min(res.igw_squared, ident)
    return ActionBound(igw2, float(np.sum(dts)), action(traj), en * en + 2.0 * dn * en)


# ---------------------------------------------------------------------------
# MMD


def bandwidths(sigma=0.03, multipliers=DEFAULT_MULTIPLIERS):
    return sigma * np.asarray(multipliers, dtype=np.float64)


def mmd(a, b, sigma=0.03, multipliers=DEFAULT_MULTIPLIERS):
    """Biased (V-statistic) multi-bandwidth Gaussian MMD, ``int k d(a-b)(a-b)``."""
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    h = bandwidths(sigma, multipliers)
    kaa, _ = kernels.gaussian_kernel_sum(a.points, a.weights, a.points, a.weights, h)
    kbb, _ = kernels.gaussian_kernel_sum(b.points, b.weights, b.points, b.weights, h)
    kab, _ = kernels.gaussian_kernel_sum(a.points, a.weights, b.points, b.weights, h)
    return kaa + kbb - 2.0 * kab


def mmd_and_grad(x, wx, target, h):
    """MMD of points ``x`` against a target cloud, with its gradient in ``x``."""
    kaa, gaa = kernels.gaussian_kernel_sum(x, wx, x, wx, h, want_grad=True)
    kbb, _ = kernels.gaussian_kernel_sum(target.points, target.weights, target.points, target.weights, h)
    kab, gab = kernels.gaussian_kernel_sum(x, wx, target.points, target.weights, h, want_grad=True)
    return kaa + kbb - 2.0 * kab, 2.0 * gaa - 2.0 * gab


# ---------------------------------------------------------------------------
# MLP velocity model


class VelocityModel:
    """Fully connected tanh network ``v(t, x)`` with input ``[t, x]``.

    ``weights[l]`` has shape ``(out, in)`` and a layer computes
    ``z @ W.T + b``. Hidden layers use ``tanh``; the output layer is linear.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape[0] != w.shape[0]:
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l} input width {w.shape[1]} != previous output {self.weights[l - 1].shape[0]}")
        self.d = self.weights[-1].shape[0]
        if self.weights[0].shape[1] != self.d + 1:
            raise ValueError("first layer must take d + 1 inputs (time and position)")

    @classmethod
    def init(cls, d, hidden=(50, 50), seed=0):
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init with a zero output layer."""
        rng = np.random.default_rng(seed)
        sizes = [d + 1, *hidden, d]
        ws, bs = [], []
        for l, (fin, fout) in enumerate(zip(sizes[:-1], sizes[1:])):
            if l == len(sizes) - 2:
                ws.append(np.zeros((fout, fin)))
                bs.append(np.zeros(fout))
            else:
                bound = 1.0 / math.sqrt(fin)
                ws.append(rng.uniform(-bound, bound, (fout, fin)))
                bs.append(rng.uniform(-bound, bound, fout))
        return cls(ws, bs)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        k = 0
        for l, w in enumerate(self.weights):
            self.weights[l] = theta[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            nb = self.biases[l].size
            self.biases[l] = theta[k : k + nb].copy()
            k += nb

    def copy(self):
        return VelocityModel(self.weights, self.biases)

    def forward(self, t, x, keep=False):
        x = np.asarray(x, dtype=np.float64)
        z = np.concatenate([np.full((x.shape[0], 1), float(t)), x], axis=1)
        acts = [z]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = z @ w.T + b
            if l < last:
                z = np.tanh(z)
            acts.append(z)
        return (z, acts) if keep else z

    def backward(self, acts, grad_out):
        """Reverse pass. Returns ``(param_grad_vector, grad_wrt_x)``."""
        last = len(self.weights) - 1
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        delta = grad_out
        for l in range(last, -1, -1):
            if l < last:
                delta = delta * (1.0 - acts[l + 1] ** 2)
            gw[l] = delta.T @ acts[l]
            gb[l] = delta.sum(axis=0)
            delta = delta @ self.weights[l]
        flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])
        return flat, delta[:, 1:]

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "activation": "tanh",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            m = cls([np.asarray(w, dtype=np.float64) for w in obj["weights"]], obj["biases"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model checkpoint: {exc}") from None
        if "sizes" in obj and list(obj["sizes"]) != m.sizes:
            raise ParseError(f"checkpoint sizes {obj['sizes']} do not match its weights {m.sizes}")
        return m


def save_model(path, model):
    atomic_write(path, json.dumps(model.to_dict()) + "\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from None
    return VelocityModel.from_dict(obj)


def model_eval(model, t, cloud):
    if cloud.d != model.d:
        raise ValueError(f"model dimension {model.d} does not match cloud dimension {cloud.d}")
    return model.forward(t, cloud.points)


def rollout(model, cloud0, k):
    """Euler rollout with step ``1/k``; ``k + 1`` frames, each with its velocity."""
    if k < 1:
        raise ValueError("k must be at least 1")
    h = 1.0 / k
    traj = Trajectory(tau=h, meta={"kind": "rollout"})
    x = np.array(cloud0.points)
    for j in range(k + 1):
        v = model.forward(j * h, x)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(x))):
            raise NonFiniteError(f"non-finite state in rollout at step {j}", state=x)
        traj.append(Frame(j * h, cloud0.with_points(x), v))
        if j < k:
            x = x + h * v
    return traj


# ---------------------------------------------------------------------------
# training


@dataclass
class MatchConfig:
    k: int = 10
    lam: float = 100.0
    epochs: int = 2000
    lr: float = 0.01
    sigma: float = 0.03
    multipliers: tuple = DEFAULT_MULTIPLIERS
    geometry: str = "igw_action"
    try_reflection: bool = True
    momentum: float = 0.0
    optimizer: str = "gd"
    patience: int = 500
    hidden: tuple = (50, 50)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.geometry not in ACTION_GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}; choose from {', '.join(ACTION_GEOMETRIES)}")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.multipliers = tuple(float(m) for m in self.multipliers)
        self.hidden = tuple(int(h) for h in self.hidden)


def _metric_grads(x, v, w):
    """Value of ``g(v, v)`` and its gradients in ``v`` and ``x``."""
    sigma = (x.T * w) @ x
    m = (x.T * w) @ v
    q = (v.T * w) @ v
    val = 2.0 * float(np.sum(sigma * q)) + 2.0 * float(np.sum(m * m.T))
    gv = 4.0 * w[:, None] * (v @ sigma + x @ m.T)
    gx = 4.0 * w[:, None] * (x @ q + v @ m)
    return val, gv, gx


def _l2_grads(x, v, w):
    val = float(np.dot(w, np.einsum("ij,ij->i", v, v)))
    return val, 2.0 * w[:, None] * v, np.zeros_like(x)


def loss_and_grad(model, source, target, cfg, want_grad=True):
    """Flow-matching loss and its gradient in the flattened parameters.

    Returns ``(total, action_term, mmd_term, grad)``; ``grad`` is ``None``
    when ``want_grad`` is false.
    """
    k = cfg.k
    h = 1.0 / k
    w = source.weights
    bw = bandwidths(cfg.sigma, cfg.multipliers)
    terms = _metric_grads if cfg.geometry == "igw_action" else _l2_grads
    xs, caches, gvs, gxs = [], [], [], []
    act = 0.0
    x = np.array(source.points)
    for j in range(k):
        v, acts = model.forward(j * h, x, keep=True)
        val, gv, gx = terms(x, v, w)
        act += val / k
        xs.append(x)
        caches.append(acts)
        gvs.append(gv)
        gxs.append(gx)
        x = x + h * v
    if cfg.lam:
        mval, mgrad = mmd_and_grad(x, w, target, bw)
    else:
        mval, mgrad = 0.0, np.zeros_like(x)
    total = act + cfg.lam * mval
    if not want_grad:
        return total, act, mval, None
    adj = cfg.lam * mgrad
    grad = np.zeros(model.n_params)
    for j in range(k - 1, -1, -1):
        gout = h * adj + gvs[j] / k
        gp, gin = model.backward(caches[j], gout)
        grad += gp
        adj = adj + gxs[j] / k + gin
    return total, act, mval, grad


@dataclass
class MatchReport:
    loss_curve: list = field(default_factory=list)
    final_loss: float = math.nan
    final_mmd: float = math.nan
    final_action: float = math.nan
    chosen_target: str = "original"
    early_stopped: bool = False
    epochs_run: int = 0
    best_epoch: int = 0
    candidates: dict = field(default_factory=dict)


def _train_one(source, target, cfg, seed):
    model = VelocityModel.init(source.d, cfg.hidden, seed)
    theta = model.get_params()
    vel = np.zeros_like(theta)
    sq = np.zeros_like(theta)
    step = 0
    best = (math.inf, theta.copy(), 0)
    curve = []
    stale = 0
    early = False
    epoch = 0
    for epoch in range(cfg.epochs + 1):
        model.set_params(theta)
        total, act, mval, grad = loss_and_grad(model, source, target, cfg, want_grad=epoch < cfg.epochs)
        if not (math.isfinite(total) and (grad is None or np.all(np.isfinite(grad)))):
            raise NonFiniteError(f"loss became non-finite at epoch {epoch}", state=theta.copy(), epoch=epoch)
        curve.append((epoch, total, act, mval))
        if total < best[0]:
            best = (total, theta.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                early = True
                log.info("no improvement for %d epochs, stopping at epoch %d", cfg.patience, epoch)
                break
        if grad is None:
            break
        if cfg.optimizer == "adam":
            step += 1
            vel = 0.9 * vel + 0.1 * grad
            sq = 0.999 * sq + 0.001 * grad * grad
            theta = theta - cfg.lr * (vel / (1 - 0.9**step)) / (np.sqrt(sq / (1 - 0.999**step)) + 1e-8)
        else:
            vel = cfg.momentum * vel - cfg.lr * grad
            theta = theta + vel
    model.set_params(best[1])
    total, act, mval, _ = loss_and_grad(model, source, target, cfg, want_grad=False)
    rep = MatchReport(curve, total, mval, act, "original", early, epoch, best[2])
    return model, rep


def train_flow_match(source, target, cfg=None, seed=0):
    """Fit a velocity model carrying ``source`` onto ``target``.

    Gradient descent (optional momentum) or Adam on the flattened parameters.
    With ``cfg.try_reflection`` the model is also trained against the
    target reflected by ``diag(-1, 1, ..., 1)`` and the lower-loss run is
    returned. The returned model holds the best parameters seen.

    Returns ``(VelocityModel, MatchReport)``.
    """
    cfg = MatchConfig() if cfg is None else cfg
    if source.d != target.d:
        raise ValueError(f"dimension mismatch: {source.d} vs {target.d}")
    targets = [("original", target)]
    if cfg.try_reflection:
        targets.append(("reflected", PointCloud(target.points @ reflection(target.d).T, target.weights)))
    best = None
    cands = {}
    for name, tgt in targets:
        model, rep = _train_one(source, tgt, cfg, seed)
        rep.chosen_target = name
        cands[name] = rep.final_loss
        if best is None or rep.final_loss < best[1].final_loss:
            best = (model, rep)
    best[1].candidates = cands
    return best


def format_loss_csv(report):
    from .io import fmt

    lines = ["epoch,total,action,mmd"]
    for epoch, total, act, mval in report.loss_curve:
        lines.append(f"{epoch},{fmt(total)},{fmt(act)},{fmt(mval)}")
    return "\n".join(lines) + "\n"


def config_dict(cfg):
    out = asdict(cfg)
    out["multipliers"] = list(cfg.multipliers)
    out["hidden"] = list(cfg.hidden)
    return out
