"""Event triggering and the behavior schedule of the supporting polygon.

A behavior is a time segment with fixed dynamics parameterization: either the
polygon is static (``track``, ``raise-body``, ``bypass``) or the track width
is ramping (``widen-track``, the only kind with the trigger flag set).
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .params import RobotParams
from .reference import Path, PathSpec, make_path

KINDS = ("track", "widen-track", "raise-body", "bypass")
_TOL = 1e-9


class ScheduleError(ValueError):
    """Behavior windows cannot be placed without overlapping."""


@dataclass(frozen=True)
class Obstacle:
    s_position: float      # arc position of the obstacle centre, m
    width: float           # d_s, m
    height: float          # m
    length: float = 0.5    # extent along the path, m

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("obstacle width must be > 0")
        if self.height < 0:
            raise ValueError("obstacle height must be >= 0")
        if not self.length >= 0:
            raise ValueError("obstacle length must be >= 0")


@dataclass(frozen=True)
class BehaviorConfig:
    T_adj: float = 2.0              # duration of a track-width ramp, s
    lead: float = 3.0               # ramp completes this far before the front axle meets the obstacle, m
    clear_margin: float = 0.5       # restore starts once the rear axle is this far past it, m
    straddle_margin: float = 0.1    # widened track exceeds the obstacle width by this, m
    clearance_max: float = 1.5      # highest obstacle the raised body can pass over, m

    def __post_init__(self):
        if not self.T_adj > 0:
            raise ValueError("T_adj must be > 0")
        if not self.clearance_max > 0:
            raise ValueError("clearance_max must be > 0")
        if self.lead < 0 or self.clear_margin < 0 or self.straddle_margin < 0:
            raise ValueError("lead, clear_margin and straddle_margin must be >= 0")


@dataclass(frozen=True)
class Behavior:
    kind: str
    t_start: float
    t_end: float
    d_target: float
    d_from: float | None = None
    obstacle: int | None = None
    gamma: int = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if not self.t_end > self.t_start:
            raise ValueError(f"behavior must have t_end > t_start, got [{self.t_start}, {self.t_end}]")
        if self.d_from is None:
            object.__setattr__(self, "d_from", self.d_target)
        object.__setattr__(self, "gamma", int(self.kind == "widen-track"))

    def width(self, t):
        if self.gamma:
            return polygon_ramp(t, self, self.t_end - self.t_start, self.d_from)
        return self.d_target


def trigger(d_s: float, d0: float, delta_max: float) -> int:
    """1 iff the obstacle width lies strictly inside the stretchable range."""
    return int(d0 < d_s < d0 + delta_max)


def classify_obstacle(obs: Obstacle, params: RobotParams, clearance_max: float = 1.5) -> str:
    """How the robot passes an obstacle lying on its path.

    Anything taller than the raised body clears, or too wide to straddle even
    at full stretch, has to be driven around (the reference must avoid it).
    """
    if obs.height > clearance_max:
        return "bypass"
    if trigger(obs.width, params.d0, params.delta_max_stretch):
        return "widen-track"
    if obs.width <= params.d0:
        return "raise-body"
    return "bypass"


def polygon_ramp(t, behavior: Behavior, T_adj: float, d_from: float):
    """Track width during a ramp: linear over ``T_adj`` then held at target."""
    t = np.asarray(t, dtype=float)
    if np.any(t < behavior.t_start - _TOL):
        raise ValueError(f"t before behavior start {behavior.t_start}")
    frac = np.clip((t - behavior.t_start) / T_adj, 0.0, 1.0)
    d = d_from + (behavior.d_target - d_from) * frac
    d = np.where(t >= behavior.t_start + T_adj - _TOL, behavior.d_target, d)
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class BehaviorSchedule:
    behaviors: tuple[Behavior, ...]

    def __post_init__(self):
        b = self.behaviors
        if not b:
            raise ValueError("empty schedule")
        if abs(b[0].t_start) > _TOL:
            raise ValueError("schedule must start at t=0")
        for prev, nxt in zip(b[:-1], b[1:]):
            if abs(prev.t_end - nxt.t_start) > _TOL:
                raise ValueError(f"schedule not contiguous at t={prev.t_end}")
        object.__setattr__(self, "_starts", [x.t_start for x in b])

    @property
    def t_end(self) -> float:
        return self.behaviors[-1].t_end

    def index(self, t: float) -> int:
        return max(0, bisect.bisect_right(self._starts, t + _TOL) - 1)

    def at(self, t: float) -> Behavior:
        return self.behaviors[self.index(t)]

    def width(self, t):
        if np.ndim(t) == 0:
            return float(self.at(float(t)).width(float(t)))
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        idx = np.searchsorted(np.asarray(self._starts), t + _TOL, side="right") - 1
        idx = np.clip(idx, 0, len(self.behaviors) - 1)
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = self.behaviors[i].width(t[mask])
        return out

    def gamma(self, t: float) -> int:
        return self.at(t).gamma

    def switch_times(self) -> list[float]:
        return [b.t_start for b in self.behaviors[1:]]

    def next_switch(self, t: float) -> float | None:
        i = bisect.bisect_right(self._starts, t + _TOL)
        return self._starts[i] if i < len(self._starts) else None

    def episodes(self, kind: str = "widen-track") -> list[tuple[float, float]]:
        return [(b.t_start, b.t_end) for b in self.behaviors if b.kind == kind]


def _quantize_down(t, q):
    return t if q is None else math.floor(t / q + _TOL) * q


def _quantize_up(t, q):
    return t if q is None else math.ceil(t / q - _TOL) * q


def build_schedule(obstacles, path: PathSpec | Path, lookahead: float, params: RobotParams,
                   config: BehaviorConfig = BehaviorConfig(), t_total: float | None = None,
                   detect_times=None, quantum: float | None = None) -> BehaviorSchedule:
    """Turn obstacles along the reference into a contiguous behavior schedule.

    Switch times come from the reference arrival time at each obstacle.
    A widening ramp starts no earlier than the obstacle becomes visible,
    ``lookahead`` metres ahead (or at the given ``detect_times``).
    ``quantum`` snaps switch times onto the controller grid.
    """
    if isinstance(path, PathSpec):
        path = make_path(path)
    obstacles = list(obstacles)
    if any(a.s_position > b.s_position for a, b in zip(obstacles[:-1], obstacles[1:])):
        raise ValueError("obstacles must be sorted by arc position")
    if detect_times is None:
        detect_times = [float(path.time_at_arc(o.s_position - lookahead))
                        for o in obstacles]
    half_l = params.l / 2
    T = config.T_adj
    events = []  # (t0, t1, kind, d_from, d_target, obstacle index)
    for k, (obs, t_seen) in enumerate(zip(obstacles, detect_times)):
        kind = classify_obstacle(obs, params, config.clearance_max)
        front = obs.s_position - obs.length / 2
        rear = obs.s_position + obs.length / 2
        t_near = float(path.time_at_arc(front - config.lead - half_l))
        t_past = float(path.time_at_arc(rear + config.clear_margin + half_l))
        if kind == "widen-track":
            d_wide = min(obs.width + config.straddle_margin, params.d_max)
            t_w = _quantize_down(t_near - T, quantum)
            if t_w < t_seen - _TOL:
                t_w = _quantize_up(t_seen, quantum)
            t_r = _quantize_up(t_past, quantum)
            if t_r < t_w + T - _TOL:
                raise ScheduleError(
                    f"obstacle {k} at s={obs.s_position}: restore at t={t_r:.3f} s overlaps "
                    f"widening ramp [{t_w:.3f}, {t_w + T:.3f}] s")
            events.append((t_w, t_w + T, "widen-track", params.d0, d_wide, k))
            events.append((t_r, t_r + T, "widen-track", d_wide, params.d0, k))
        else:
            events.append((_quantize_down(t_near, quantum), _quantize_up(t_past, quantum),
                           kind, params.d0, params.d0, k))
    for a, b in zip(events[:-1], events[1:]):
        if b[0] < a[1] - _TOL:
            raise ScheduleError(
                f"adjustment windows overlap: {a[2]} for obstacle {a[5]} ends at {a[1]:.3f} s, "
                f"{b[2]} for obstacle {b[5]} starts at {b[0]:.3f} s")
    if t_total is None:
        t_total = path.duration
    if events:
        t_total = max(t_total, events[-1][1])

    behaviors = []
    t, d = 0.0, params.d0
    for t0, t1, kind, d_from, d_to, k in events:
        if t0 > t + _TOL:
            behaviors.append(Behavior("track", t, t0, d))
        elif t0 < -_TOL:
            raise ScheduleError(f"{kind} for obstacle {k} would start before t=0")
        behaviors.append(Behavior(kind, max(t0, t), t1, d_to, d_from=d_from, obstacle=k))
        t, d = t1, d_to
    if t_total > t + _TOL or not behaviors:
        behaviors.append(Behavior("track", t, max(t_total, t + _TOL * 10), d))
    return BehaviorSchedule(tuple(behaviors))
