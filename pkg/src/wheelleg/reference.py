"""Reference trajectories: geometry, timing, curvature and turn direction."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from scipy.interpolate import CubicSpline

EPS = 1e-6
PATH_KINDS = ("lane-change", "straight", "circle", "waypoint-spline")

# Line 2 obstacle stations (arc position, m); the path is built to pass both.
LINE2_STATIONS = (15.0, 32.0)


class ReferenceRangeError(ValueError):
    """Requested time lies outside the reference trajectory."""


@dataclass(frozen=True)
class PathSpec:
    kind: str
    speed: float = 2.0
    length: float = 40.0          # straight, circle
    offset: float = 3.5           # lane-change lateral offset
    transition: float = 25.0      # lane-change transition length along X
    lead_in: float = 5.0
    lead_out: float = 10.0
    radius: float = 5.0
    waypoints: tuple = ()         # ((t, X, Y), ...) for waypoint-spline
    name: str = ""

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}; expected one of {PATH_KINDS}")
        if self.kind != "waypoint-spline" and not self.speed > 0:
            raise ValueError("path speed must be > 0")
        if self.kind == "waypoint-spline" and len(self.waypoints) < 4:
            raise ValueError("waypoint-spline needs at least 4 (t, X, Y) rows")
        for name in ("length", "transition", "radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"path {name} must be > 0")
        if self.lead_in < 0 or self.lead_out < 0:
            raise ValueError("lead_in and lead_out must be >= 0")


@dataclass(frozen=True)
class ReferencePoint:
    t: float
    X_ref: float
    Y_ref: float
    theta_ref: float
    v_ref: float
    K: float
    C_d: int
    s: float = 0.0


@dataclass(frozen=True)
class ReferenceSamples:
    """Vectorized counterpart of :class:`ReferencePoint`."""
    t: np.ndarray
    X_ref: np.ndarray
    Y_ref: np.ndarray
    theta_ref: np.ndarray
    v_ref: np.ndarray
    K: np.ndarray
    C_d: np.ndarray
    s: np.ndarray

    def __len__(self):
        return len(self.t)

    def point(self, i: int) -> ReferencePoint:
        return ReferencePoint(float(self.t[i]), float(self.X_ref[i]), float(self.Y_ref[i]),
                              float(self.theta_ref[i]), float(self.v_ref[i]), float(self.K[i]),
                              int(self.C_d[i]), float(self.s[i]))


def curvature_direction(dx, dy, ddx, ddy):
    """Curvature magnitude and turn direction from path derivatives.

    Works for any regular parameterization. The direction is the sign of the
    planar cross product of velocity and acceleration (+1 turning left).
    Accepts scalars or equally shaped arrays.
    """
    dx, dy, ddx, ddy = (np.asarray(v, dtype=float) for v in (dx, dy, ddx, ddy))
    cross = dx * ddy - ddx * dy
    speed2 = dx * dx + dy * dy
    regular = speed2 > EPS * EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.where(regular, np.abs(cross) / np.where(regular, speed2, 1.0) ** 1.5, 0.0)
    C_d = np.where(regular, np.sign(cross), 0.0).astype(int)
    if K.ndim == 0:
        return float(K), int(C_d)
    return K, C_d


# ---------------------------------------------------------------------------
# geometry


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class _ArcTable:
    """Arc length of a curve parameter q via cell-wise Gauss-Legendre."""

    def __init__(self, speed_fn, q0, q1, cell=0.05):
        self.speed_fn = speed_fn
        n = max(1, int(math.ceil((q1 - q0) / cell)))
        self.nodes = np.linspace(q0, q1, n + 1)
        seg = np.array([self._integral(a, b) for a, b in zip(self.nodes[:-1], self.nodes[1:])])
        self.s_nodes = np.concatenate(([0.0], np.cumsum(seg)))

    def _integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        q = mid[..., None] + half[..., None] * _GL_X
        return half * np.sum(_GL_W * self.speed_fn(q), axis=-1)

    @property
    def total(self):
        return float(self.s_nodes[-1])

    def arc(self, q):
        q = np.asarray(q, dtype=float)
        i = np.clip(np.searchsorted(self.nodes, q, side="right") - 1, 0, len(self.nodes) - 2)
        return self.s_nodes[i] + self._integral(self.nodes[i], q)

    def param(self, s):
        """Invert ``arc``; Newton from a table-interpolated start."""
        s = np.asarray(s, dtype=float)
        q = np.interp(s, self.s_nodes, self.nodes)
        for _ in range(6):
            q = q - (self.arc(q) - s) / self.speed_fn(q)
        return q


class _Curve:
    """Planar curve with parameter q; subclasses supply positions/derivatives."""

    def eval(self, q):
        raise NotImplementedError

    def speed_q(self, q):
        _, _, dx, dy, _, _ = self.eval(q)
        return np.hypot(dx, dy)


class _Straight(_Curve):
    def __init__(self, length):
        self.q0, self.q1 = 0.0, float(length)

    def eval(self, q):
        q = np.asarray(q, dtype=float)
        z = np.zeros_like(q)
        return q, z, np.ones_like(q), z, z, z


class _LaneChange(_Curve):
    """Graph y(x) with a quintic smoothstep between two straights (C2)."""

    def __init__(self, lead_in, transition, lead_out, offset):
        self.x0, self.L, self.A = float(lead_in), float(transition), float(offset)
        self.q0, self.q1 = 0.0, float(lead_in + transition + lead_out)

    def eval(self, q):
        x = np.asarray(q, dtype=float)
        tau = np.clip((x - self.x0) / self.L, 0.0, 1.0)
        y = self.A * tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
        dy = self.A / self.L * 30.0 * tau**2 * (1.0 - tau) ** 2
        ddy = self.A / self.L**2 * 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau)
        return x, y, np.ones_like(x), dy, np.zeros_like(x), ddy


class _Circle(_Curve):
    """Left-hand circle starting at the origin heading along +X."""

    def __init__(self, radius, length):
        self.R = float(radius)
        self.q0, self.q1 = 0.0, float(length)

    def eval(self, q):
        phi = np.asarray(q, dtype=float) / self.R
        s, c = np.sin(phi), np.cos(phi)
        return self.R * s, self.R * (1.0 - c), c, s, -s / self.R, c / self.R


class _Spline(_Curve):
    """Time-parameterized cubic spline through (t, X, Y) waypoints."""

    def __init__(self, waypoints):
        w = np.asarray(waypoints, dtype=float)
        if w.ndim != 2 or w.shape[1] != 3:
            raise ValueError("waypoints must be rows of (t, X, Y)")
        if np.any(np.diff(w[:, 0]) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        self.sx = CubicSpline(w[:, 0], w[:, 1])
        self.sy = CubicSpline(w[:, 0], w[:, 2])
        self.q0, self.q1 = float(w[0, 0]), float(w[-1, 0])

    def eval(self, q):
        q = np.asarray(q, dtype=float)
        return (self.sx(q), self.sy(q), self.sx(q, 1), self.sy(q, 1),
                self.sx(q, 2), self.sy(q, 2))


class Path:
    """A reference trajectory: a curve plus a timing law along it."""

    def __init__(self, spec: PathSpec):
        self.spec = spec
        if spec.kind == "straight":
            self.curve = _Straight(spec.length)
        elif spec.kind == "lane-change":
            self.curve = _LaneChange(spec.lead_in, spec.transition, spec.lead_out, spec.offset)
        elif spec.kind == "circle":
            self.curve = _Circle(spec.radius, spec.length)
        else:
            self.curve = _Spline(spec.waypoints)
        c = self.curve
        self.arc = _ArcTable(c.speed_q, c.q0, c.q1)
        self.timed = spec.kind == "waypoint-spline"
        if self.timed:
            self.t0, self.duration = c.q0, c.q1 - c.q0
        else:
            self.t0, self.duration = 0.0, self.arc.total / spec.speed
        q = np.linspace(c.q0, c.q1, max(2, int(math.ceil(self.arc.total / 0.05)) + 1))
        x, y, *_ = c.eval(q)
        self._poly = np.column_stack([x, y])
        self._poly_s = self.arc.arc(q)

    @property
    def length(self) -> float:
        return self.arc.total

    def _param_at_time(self, t):
        if self.timed:
            return self.t0 + t
        return self.arc.param(self.spec.speed * t)

    def arc_at_time(self, t):
        t = np.asarray(t, dtype=float)
        if self.timed:
            return self.arc.arc(self.t0 + t)
        return self.spec.speed * t

    def time_at_arc(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        if self.timed:
            return self.arc.param(s) - self.t0
        return s / self.spec.speed

    def sample(self, times) -> ReferenceSamples:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < -1e-9) or np.any(times > self.duration + 1e-9):
            raise ReferenceRangeError(
                f"t outside [0, {self.duration:.6g}] s: [{times.min():.6g}, {times.max():.6g}]")
        times_c = np.clip(times, 0.0, self.duration)
        q = self._param_at_time(times_c)
        x, y, dx, dy, ddx, ddy = self.curve.eval(q)
        K, C_d = curvature_direction(dx, dy, ddx, ddy)
        K, C_d = np.atleast_1d(K), np.atleast_1d(C_d)
        theta = np.unwrap(np.arctan2(dy, dx))
        if self.timed:
            v = np.hypot(dx, dy)
        else:
            v = np.full_like(times, self.spec.speed)
        return ReferenceSamples(times, x, y, theta, v, K, C_d, self.arc_at_time(times_c))

    def project(self, X: float, Y: float) -> float:
        """Arc position of the point on the path closest to (X, Y)."""
        P = self._poly
        i = int(np.argmin((P[:, 0] - X) ** 2 + (P[:, 1] - Y) ** 2))
        best_s, best_d = self._poly_s[i], math.inf
        for j in (i - 1, i):
            if j < 0 or j + 1 >= len(P):
                continue
            a, b = P[j], P[j + 1]
            ab = b - a
            tt = float(np.clip(np.dot((X, Y) - a, ab) / np.dot(ab, ab), 0.0, 1.0))
            q = a + tt * ab
            dist = math.hypot(X - q[0], Y - q[1])
            if dist < best_d:
                best_d = dist
                best_s = self._poly_s[j] + tt * (self._poly_s[j + 1] - self._poly_s[j])
        return float(best_s)


@functools.lru_cache(maxsize=32)
def make_path(spec: PathSpec) -> Path:
    return Path(spec)


def sample_reference(path: PathSpec | Path, t: float) -> ReferencePoint:
    if isinstance(path, PathSpec):
        path = make_path(path)
    return path.sample([t]).point(0)


def build_scenario_paths(speed: float = 2.0, offset: float = 3.5, transition: float = 25.0,
                         lead_in: float = 5.0, lead_out: float = 10.0,
                         line2_length: float = 50.0) -> dict[str, PathSpec]:
    """The two preset reference lines.

    ``line1`` is a single lane change; ``line2`` a straight run long enough
    to pass both obstacle stations in :data:`LINE2_STATIONS`.
    """
    if line2_length <= max(LINE2_STATIONS):
        raise ValueError("line2 must extend past the last obstacle station")
    return {
        "line1": PathSpec("lane-change", speed=speed, offset=offset, transition=transition,
                          lead_in=lead_in, lead_out=lead_out, name="line1"),
        "line2": PathSpec("straight", speed=speed, length=line2_length, name="line2"),
    }


def load_waypoints(path: str | FsPath) -> tuple:
    """Read a whitespace/comma separated (t, X, Y) table; '#' starts a comment."""
    rows = []
    for lineno, line in enumerate(FsPath(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 columns (t, X, Y), got {len(parts)}")
        try:
            rows.append(tuple(float(p) for p in parts))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    return tuple(rows)
