"""Command-line interface.

Subcommands: ``dist``, ``flow``, ``jko``, ``match``, ``grid-eval``,
``transform`` and ``shape``. Options may also come from a TOML file given by
``--config``; its top-level keys apply to every subcommand and a table named
after the subcommand overrides them. Flags override both.

Exit codes: 0 success, 1 unexpected failure, 2 parse or usage error,
3 solver precondition failure, 4 covariance singularity during a flow (the
partial trajectory is still written), 5 JKO inner-solver divergence,
6 non-finite loss during flow matching.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .cloud import SHAPES, PointCloud, apply_linear, covariance, generate_shape, moment_matrix, reflection, rotation_2d
from .errors import InnerSolverDivergence, IGWError, NonFiniteError, ParseError, SingularityError
from .io import atomic_write, fmt, fmt_human, format_csv, load_csv, load_trajectory_json, save_scalars_csv, save_trajectory_json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE = 2
EXIT_PRECONDITION = 3
EXIT_SINGULAR = 4
EXIT_DIVERGENCE = 5
EXIT_NONFINITE = 6


class _Run:
    """Collects inputs and outputs for the run manifest."""

    def __init__(self, command, args):
        self.command = command
        self.args = args
        self.inputs = {}
        self.outputs = []
        self.start = time.perf_counter()

    def read(self, path):
        with open(path, "rb") as fh:
            self.inputs[os.fspath(path)] = hashlib.sha256(fh.read()).hexdigest()
        return path

    def wrote(self, path):
        self.outputs.append(os.fspath(path))

    def manifest(self):
        cfg = {k: v for k, v in vars(self.args).items() if k not in ("func", "config_data")}
        return {
            "command": self.command,
            "config": cfg,
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_s": time.perf_counter() - self.start,
            "version": __version__,
        }

    def write_manifest(self):
        path = self.args.manifest
        if path is None:
            path = (self.outputs[0] + ".manifest.json") if self.outputs else f"igwflow-{self.command}.manifest.json"
        atomic_write(path, json.dumps(self.manifest(), indent=2, default=str) + "\n")
        return path


# ---------------------------------------------------------------------------
# shared option groups


def _add_cloud_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=False)
    g.add_argument("--input", help="point-cloud CSV")
    g.add_argument("--shape", choices=SHAPES, help="generate a benchmark shape instead of reading a file")
    p.add_argument("--n", type=int, default=100, help="points for --shape (default 100)")
    p.add_argument("--jitter", type=float, default=0.0, help="Gaussian jitter for --shape")


def _add_csv_flags(p):
    p.add_argument("--header", action="store_true", help="input CSVs have a header line")
    p.add_argument("--weighted", action="store_true", help="last CSV column holds point weights")


def _add_functional(p):
    p.add_argument("--functional", choices=("potential", "coulomb", "entropy"), default="potential")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--gradient-mode", choices=("exact", "reduced"), default="exact")


def _functional(args):
    from .functionals import Functional

    return Functional(args.functional, args.epsilon, args.gradient_mode)


def _load_cloud(run, args, path=None):
    path = path if path is not None else getattr(args, "input", None)
    if path is not None:
        return load_csv(run.read(path), header=args.header, weighted=args.weighted)
    if getattr(args, "shape", None) is None:
        raise ParseError("give --input or --shape")
    return generate_shape(args.shape, args.n, seed=args.seed, jitter=args.jitter)


def _sibling(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


# ---------------------------------------------------------------------------
# commands


def cmd_dist(args, run):
    from .igw import check_comparison_bounds, igw_alternating, igw_bruteforce

    x = load_csv(run.read(args.input_a), header=args.header, weighted=args.weighted)
    y = load_csv(run.read(args.input_b), header=args.header, weighted=args.weighted)
    if args.method == "bruteforce":
        res = igw_bruteforce(x, y)
    else:
        res = igw_alternating(x, y, restarts=args.restarts, seed=args.seed)
    rep = check_comparison_bounds(x, y, restarts=args.restarts, seed=args.seed)
    report = {
        "igw": res.igw,
        "igw_squared": res.igw_squared,
        "w2": rep.w2,
        "method": args.method,
        "upper_bound": {"lhs": res.igw, "rhs": rep.upper_rhs, "violated": bool(rep.upper_violation)},
        "lower_bound": {
            "lhs": rep.lower_lhs,
            "rhs": rep.igw,
            "applicable": bool(rep.lower_applicable),
            "violated": bool(rep.lower_violation),
        },
        "permutation": np.asarray(res.coupling.perm).tolist(),
        "dual_A": res.dual_A.tolist(),
    }
    if args.json_out:
        atomic_write(args.json_out, json.dumps(report, indent=2) + "\n")
        run.wrote(args.json_out)
    print(
        f"IGW {fmt_human(res.igw)} IGW2 {fmt_human(res.igw_squared)} W2 {fmt_human(rep.w2)} "
        f"upper {fmt_human(res.igw)}<={fmt_human(rep.upper_rhs)} "
        f"lower {fmt_human(rep.lower_lhs)}<={fmt_human(rep.igw)}"
    )
    return EXIT_OK


def cmd_flow(args, run):
    from .flow import FlowConfig, euler_flow

    cloud = _load_cloud(run, args)
    cfg = FlowConfig(args.geometry, args.tau, args.steps, _functional(args), args.floor, args.emit_velocity)
    traj = euler_flow(cfg, cloud)
    save_trajectory_json(args.out, traj)
    run.wrote(args.out)
    scal = args.scalars or _sibling(args.out, ".scalars.csv")
    save_scalars_csv(scal, traj)
    run.wrote(scal)
    last = traj.frames[-1]
    reason = traj.stop_reason or "completed"
    print(f"F {fmt_human(last.scalars['F'])} t {fmt_human(last.t)} frames {len(traj)} stop {reason}")
    if traj.stop_reason is not None:
        return EXIT_SINGULAR
    return EXIT_OK


def cmd_jko(args, run):
    from .flow import jko_flow

    cloud = _load_cloud(run, args)
    inner = {"iters": args.iters, "replan_every": args.replan_every, "seed": args.seed}
    if args.lr is not None:
        inner["lr"] = args.lr
    traj = jko_flow(_functional(args), cloud, args.tau, args.n_steps, **inner)
    save_trajectory_json(args.out, traj)
    run.wrote(args.out)
    diag = args.diagnostics or _sibling(args.out, ".steps.csv")
    cols = ("F", "step_igw", "step_margin", "crosscov_min_eig", "crosscov_asymmetry", "lambda_min")
    lines = ["step,t," + ",".join(cols)]
    for i, fr in enumerate(traj.frames):
        lines.append(f"{i},{fmt(fr.t)}," + ",".join(fmt(fr.scalars.get(c, math.nan)) for c in cols))
    atomic_write(diag, "\n".join(lines) + "\n")
    run.wrote(diag)
    margins = [fr.scalars["step_margin"] for fr in traj.frames[1:]]
    worst = min(margins) if margins else math.nan
    print(f"F {fmt_human(traj.frames[-1].scalars['F'])} steps {args.n_steps} min_step_margin {fmt_human(worst)}")
    return EXIT_OK


def cmd_match(args, run):
    from .dynamics import MatchConfig, format_loss_csv, rollout, save_model, train_flow_match

    src = load_csv(run.read(args.source), header=args.header, weighted=args.weighted)
    tgt = load_csv(run.read(args.target), header=args.header, weighted=args.weighted)
    cfg = MatchConfig(
        k=args.k,
        lam=args.lam,
        epochs=args.epochs,
        lr=args.lr,
        sigma=args.sigma,
        geometry=args.geometry,
        try_reflection=not args.no_reflection,
        momentum=args.momentum,
        optimizer=args.optimizer,
        patience=args.patience,
        hidden=tuple(args.hidden),
    )
    model, rep = train_flow_match(src, tgt, cfg, seed=args.seed)
    save_model(args.out_model, model)
    run.wrote(args.out_model)
    traj = rollout(model, src, cfg.k)
    traj.meta["chosen_target"] = rep.chosen_target
    out_traj = args.out_traj or _sibling(args.out_model, ".traj.json")
    save_trajectory_json(out_traj, traj)
    run.wrote(out_traj)
    loss_csv = args.loss_csv or _sibling(args.out_model, ".loss.csv")
    atomic_write(loss_csv, format_loss_csv(rep))
    run.wrote(loss_csv)
    summary = args.report or _sibling(args.out_model, ".report.json")
    atomic_write(
        summary,
        json.dumps(
            {
                "final_loss": rep.final_loss,
                "final_mmd": rep.final_mmd,
                "final_action": rep.final_action,
                "initial_mmd": rep.loss_curve[0][3] if rep.loss_curve else None,
                "chosen_target": rep.chosen_target,
                "candidates": rep.candidates,
                "early_stopped": rep.early_stopped,
                "epochs_run": rep.epochs_run,
                "best_epoch": rep.best_epoch,
            },
            indent=2,
        )
        + "\n",
    )
    run.wrote(summary)
    print(f"MMD {fmt_human(rep.final_mmd)} action {fmt_human(rep.final_action)} target {rep.chosen_target}")
    return EXIT_OK


def grid_local_cost(model, cloud, t, gx, gy):
    """Field and ``<v(x), L[v](x)>`` at grid points for the frame ``cloud``.

    ``L[v](x) = 2 (Sigma v(x) + M_v x)`` with ``Sigma`` and
    ``M_v = sum_j w_j y_j v(y_j)^T`` taken over the cloud.
    """
    pts = np.column_stack([gx, gy])
    v_cloud = model.forward(t, cloud.points)
    sigma = covariance(cloud)
    m = moment_matrix(cloud, v_cloud)
    v = model.forward(t, pts)
    cost = 2.0 * np.einsum("ij,ij->i", v @ sigma, v) + 2.0 * np.einsum("ij,ij->i", v, pts @ m.T)
    return v, cost


def cmd_grid_eval(args, run):
    from .dynamics import load_model

    model = load_model(run.read(args.model))
    if args.cloud is not None:
        cloud = load_csv(run.read(args.cloud), header=args.header, weighted=args.weighted)
        t = 0.0 if args.t is None else args.t
    elif args.trajectory is not None:
        traj = load_trajectory_json(run.read(args.trajectory))
        frame = traj.frames[args.frame]
        cloud = frame.cloud
        t = frame.t if args.t is None else args.t
    else:
        raise ParseError("give --cloud or --trajectory")
    if cloud.d != model.d:
        raise ValueError(f"model dimension {model.d} does not match cloud dimension {cloud.d}")
    if cloud.d != 2:
        raise ValueError("grid evaluation needs 2-D data")
    if args.bounds is None:
        lo = cloud.points.min(axis=0)
        hi = cloud.points.max(axis=0)
        pad = 0.1 * np.maximum(hi - lo, 1e-12)
        xmin, ymin = lo - pad
        xmax, ymax = hi + pad
    else:
        xmin, xmax, ymin, ymax = args.bounds
    nx, ny = args.resolution
    xs = np.linspace(xmin, xmax, nx) if nx > 1 else np.array([0.5 * (xmin + xmax)])
    ys = np.linspace(ymin, ymax, ny) if ny > 1 else np.array([0.5 * (ymin + ymax)])
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    v, cost = grid_local_cost(model, cloud, t, gx, gy)
    lines = ["gx,gy,vx,vy,local_cost"]
    for row in zip(gx, gy, v[:, 0], v[:, 1], cost):
        lines.append(",".join(fmt(val) for val in row))
    atomic_write(args.out, "\n".join(lines) + "\n")
    run.wrote(args.out)
    print(f"grid {nx}x{ny} max_local_cost {fmt_human(cost.max())}")
    return EXIT_OK


def _parse_matrix(text):
    try:
        rows = [[float(v) for v in r.split(",")] for r in text.strip().split(";")]
        m = np.array(rows, dtype=np.float64)
    except ValueError:
        raise ParseError(f"bad matrix {text!r}; expected rows like '1,0;0,1'") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
        raise ParseError(f"matrix must be square and finite, got {text!r}")
    return m


def cmd_transform(args, run):
    cloud = load_csv(run.read(args.input), header=args.header, weighted=args.weighted)
    if args.rotate_deg is not None:
        if cloud.d != 2:
            raise ValueError("--rotate-deg needs 2-D points; use --matrix")
        m = rotation_2d(args.rotate_deg)
    elif args.reflect:
        m = reflection(cloud.d)
    else:
        m = _parse_matrix(args.matrix)
    out = apply_linear(cloud, m)
    atomic_write(args.out, format_csv(out, weighted=args.weighted))
    run.wrote(args.out)
    print(f"wrote {out.n} points to {args.out}")
    return EXIT_OK


def cmd_shape(args, run):
    cloud = generate_shape(args.kind, args.n, seed=args.seed, jitter=args.jitter)
    if args.rotate_deg:
        cloud = apply_linear(cloud, rotation_2d(args.rotate_deg))
    atomic_write(args.out, format_csv(cloud))
    run.wrote(args.out)
    print(f"wrote {cloud.n} points to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with option defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--manifest", help="run-manifest path (default: next to the first output)")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="igwflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", parents=[common], help="IGW and W2 distances between two clouds")
    p.add_argument("input_a")
    p.add_argument("input_b")
    p.add_argument("--method", choices=("alternating", "bruteforce"), default="alternating")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--json-out")
    _add_csv_flags(p)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("flow", parents=[common], help="explicit Euler gradient flow")
    _add_cloud_source(p)
    _add_csv_flags(p)
    _add_functional(p)
    p.add_argument("--geometry", choices=("igw", "wasserstein"), default="igw")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--floor", type=float, default=1e-8, help="covariance singularity floor")
    p.add_argument("--emit-velocity", action="store_true")
    p.add_argument("--out", required=True, help="trajectory JSON")
    p.add_argument("--scalars", help="scalars CSV (default: <out>.scalars.csv)")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("jko", parents=[common], help="minimising-movement (JKO) flow")
    _add_cloud_source(p)
    _add_csv_flags(p)
    _add_functional(p)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--n-steps", type=int, default=5)
    p.add_argument("--lr", type=float, default=None, help="inner learning rate (default 0.1*tau)")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--replan-every", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="per-step CSV (default: <out>.steps.csv)")
    p.set_defaults(func=cmd_jko)

    p = sub.add_parser("match", parents=[common], help="flow matching with an MLP velocity")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--geometry", choices=("igw_action", "w2_action"), default="igw_action")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--sigma", type=float, default=0.03)
    p.add_argument("--optimizer", choices=("gd", "adam"), default="gd")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--hidden", type=int, nargs="+", default=[50, 50])
    p.add_argument("--no-reflection", action="store_true")
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-traj")
    p.add_argument("--loss-csv")
    p.add_argument("--report")
    _add_csv_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("grid-eval", parents=[common], help="evaluate a velocity model on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--cloud", help="frame cloud CSV")
    p.add_argument("--trajectory", help="trajectory JSON (use with --frame)")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--t", type=float, default=None, help="model time (default: frame time, or 0 for --cloud)")
    p.add_argument("--bounds", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int, nargs=2, default=[50, 50], metavar=("NX", "NY"))
    p.add_argument("--out", required=True)
    _add_csv_flags(p)
    p.set_defaults(func=cmd_grid_eval)

    p = sub.add_parser("transform", parents=[common], help="apply a linear map to a cloud")
    p.add_argument("--input", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rotate-deg", type=float)
    g.add_argument("--reflect", action="store_true")
    g.add_argument("--matrix", help="rows separated by ';', entries by ','")
    p.add_argument("--out", required=True)
    _add_csv_flags(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("shape", parents=[common], help="write a benchmark shape to CSV")
    p.add_argument("kind", choices=SHAPES)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--rotate-deg", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shape)

    return parser, sub


def _apply_config(parser, sub, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return None
    try:
        with open(known.config, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"bad TOML config: {exc}") from None
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    for name, sp in sub.choices.items():
        section = dict(top)
        section.update(data.get(name, {}))
        valid = {a.dest for a in sp._actions}
        section = {k.replace("-", "_"): v for k, v in section.items()}
        unknown = [k for k in section if k not in valid]
        if unknown and name in data:
            raise ParseError(f"unknown option(s) in config table [{name}]: {', '.join(sorted(unknown))}")
        sp.set_defaults(**{k: v for k, v in section.items() if k in valid})
    return data


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    try:
        _apply_config(parser, sub, argv)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args.command, args)
    code = EXIT_FAILURE
    try:
        code = args.func(args, run)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_PARSE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_PARSE
    except InnerSolverDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DIVERGENCE
    except NonFiniteError as exc:
        where = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        code = EXIT_NONFINITE
    except (SingularityError, IGWError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_PRECONDITION
    run.write_manifest()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
