"""File formats: point-cloud CSV, trajectory JSON, per-frame scalars CSV.

Machine-readable floats are written with 17 significant digits so a
save/load round trip is exact. Every writer goes through a temp file in the
destination directory followed by an atomic rename.
"""

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .cloud import PointCloud
from .errors import ParseError
from .trajectory import Frame, Trajectory

SCALAR_COLUMNS = ("t", "F", "descent", "damping", "lambda_min")


def fmt(x):
    """17-significant-digit text for a float (exact round trip)."""
    return format(float(x), ".17g")


def fmt_human(x):
    return format(float(x), ".6g")


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via temp file + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# point-cloud CSV


def parse_csv_text(text, header=False, weighted=False):
    """Parse point-cloud CSV text.

    Parameters
    ----------
    text : str
        One point per line, comma separated.
    header : bool
        Skip the first line.
    weighted : bool
        Treat the last column as the point weight.
    """
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if header and lineno == 1:
            continue
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric field in {raw!r}", line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"non-finite value in {raw!r}", line=lineno)
        if width is None:
            width = len(vals)
            if weighted and width < 2:
                raise ParseError("weighted rows need at least one coordinate and a weight", line=lineno)
        elif len(vals) != width:
            raise ParseError(f"expected {width} columns, found {len(vals)}", line=lineno)
        rows.append(vals)
    if not rows:
        raise ParseError("no data rows")
    arr = np.array(rows, dtype=np.float64)
    try:
        if weighted:
            return PointCloud(arr[:, :-1], arr[:, -1])
        return PointCloud(arr)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_csv(path, header=False, weighted=False):
    with open(path, encoding="utf-8") as fh:
        return parse_csv_text(fh.read(), header=header, weighted=weighted)


def format_csv(cloud, weighted=False, header=False):
    out = io.StringIO()
    if header:
        names = [f"x{k + 1}" for k in range(cloud.d)] + (["w"] if weighted else [])
        out.write(",".join(names) + "\n")
    for i in range(cloud.n):
        vals = list(cloud.points[i]) + ([cloud.weights[i]] if weighted else [])
        out.write(",".join(fmt(v) for v in vals) + "\n")
    return out.getvalue()


def save_csv(path, cloud, weighted=False, header=False):
    atomic_write(path, format_csv(cloud, weighted=weighted, header=header))


# ---------------------------------------------------------------------------
# trajectory JSON


def _clean(x):
    x = float(x)
    return x if math.isfinite(x) else None


def trajectory_to_dict(traj):
    frames = []
    for f in traj.frames:
        fr = {
            "t": float(f.t),
            "points": f.cloud.points.tolist(),
            "velocity": None if f.velocity is None else f.velocity.tolist(),
            "scalars": {k: _clean(v) for k, v in f.scalars.items()},
        }
        if not f.cloud.is_uniform:
            fr["weights"] = f.cloud.weights.tolist()
        frames.append(fr)
    out = {"d": traj.d if traj.frames else 0, "tau": traj.tau, "frames": frames}
    if traj.stop_reason is not None:
        out["stop_reason"] = traj.stop_reason
    if traj.meta:
        out["meta"] = traj.meta
    return out


def trajectory_from_dict(obj):
    try:
        d = int(obj["d"])
        frames = []
        for k, fr in enumerate(obj["frames"]):
            pts = np.asarray(fr["points"], dtype=np.float64).reshape(-1, d)
            vel = fr.get("velocity")
            scal = {name: (np.nan if v is None else float(v)) for name, v in (fr.get("scalars") or {}).items()}
            cloud = PointCloud(pts, fr.get("weights"))
            frames.append(Frame(float(fr["t"]), cloud, None if vel is None else np.asarray(vel, dtype=np.float64), scal))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed trajectory JSON: {exc}") from None
    return Trajectory(frames, tau=obj.get("tau"), stop_reason=obj.get("stop_reason"), meta=obj.get("meta"))


def save_trajectory_json(path, traj):
    # json writes floats with repr, which round-trips exactly
    atomic_write(path, json.dumps(trajectory_to_dict(traj)) + "\n")


def load_trajectory_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from None
    return trajectory_from_dict(obj)


# ---------------------------------------------------------------------------
# scalars CSV


def format_scalars_csv(traj):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SCALAR_COLUMNS)
    for f in traj.frames:
        w.writerow([fmt(f.t)] + [fmt(f.scalars.get(c, np.nan)) for c in SCALAR_COLUMNS[1:]])
    return out.getvalue()


def save_scalars_csv(path, traj):
    atomic_write(path, format_scalars_csv(traj))


def load_scalars_csv(path):
    """Return a dict of column name to float array."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None:
            raise ParseError("empty scalars file")
        cols = {name: [] for name in head}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(head):
                raise ParseError(f"expected {len(head)} columns, found {len(row)}", line=lineno)
            for name, val in zip(head, row):
                cols[name].append(float(val))
    return {k: np.array(v) for k, v in cols.items()}
