"""Time-stamped sequences of clouds, the unit of flow and rollout output."""

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud


@dataclass(frozen=True, eq=False)
class Frame:
    t: float
    cloud: PointCloud
    velocity: np.ndarray = None
    scalars: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.velocity is not None:
            v = np.array(self.velocity, dtype=np.float64)
            if v.shape != self.cloud.points.shape:
                raise ValueError(f"velocity shape {v.shape} does not match cloud {self.cloud.points.shape}")
            v.setflags(write=False)
            object.__setattr__(self, "velocity", v)


class Trajectory:
    """Ordered frames with strictly increasing times and a shared ``(n, d)``.

    ``stop_reason`` is ``None`` for a run that completed all requested steps.
    """

    def __init__(self, frames=(), tau=None, stop_reason=None, meta=None):
        self.frames = []
        self.tau = tau
        self.stop_reason = stop_reason
        self.meta = dict(meta or {})
        for f in frames:
            self.append(f)

    def append(self, frame):
        if self.frames:
            last = self.frames[-1]
            if not frame.t > last.t:
                raise ValueError(f"frame time {frame.t} does not exceed previous {last.t}")
            if frame.cloud.points.shape != last.cloud.points.shape:
                raise ValueError("all frames must share n and d")
        self.frames.append(frame)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)

    @property
    def times(self):
        return np.array([f.t for f in self.frames])

    def scalar(self, name):
        return np.array([f.scalars.get(name, np.nan) for f in self.frames], dtype=np.float64)

    @property
    def n(self):
        return self.frames[0].cloud.n

    @property
    def d(self):
        return self.frames[0].cloud.d

    @property
    def has_velocities(self):
        return all(f.velocity is not None for f in self.frames)
