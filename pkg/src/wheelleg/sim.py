"""Closed-loop simulation, trajectory logs and run metrics."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import model
from .behavior import (Behavior, BehaviorConfig, Obstacle,
                       build_schedule)
from .model import CHASSIS_MODES, TIRE_MODES, IntegrationError
from .mpc import MpcConfig, MpcSolution, build_horizon, solve
from .params import RobotParams
from .reference import PathSpec, make_path

COLUMNS = (
    ["t", "X_ref", "Y_ref", "theta_ref", "X", "Y", "theta", "v_x", "v_y", "omega_r", "d", "gamma"]
    + [f"u{i}" for i in range(1, 5)]
    + [f"delta{i}" for i in range(1, 5)]
    + [f"lambda{i}" for i in range(1, 5)]
    + ["solve_time"]
)
COL = {name: i for i, name in enumerate(COLUMNS)}
STATE_COLUMNS = ("X", "Y", "theta", "v_x", "v_y", "omega_r")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    path: PathSpec
    obstacles: tuple[Obstacle, ...] = ()
    controller: MpcConfig = MpcConfig()
    robot: RobotParams = RobotParams()
    behavior: BehaviorConfig = BehaviorConfig()
    duration: float | None = None     # default: path duration minus one prediction horizon
    dt_plant: float = 0.005
    lookahead: float = 10.0
    chassis_mode: str = "physical"
    tire_mode: str = "standard"
    seed: int = 0
    width_noise: float = 0.0
    record_timing: bool = True
    reconverge_band: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "obstacles",
                           tuple(sorted(self.obstacles, key=lambda o: o.s_position)))
        if self.chassis_mode not in CHASSIS_MODES:
            raise ValueError(f"chassis_mode must be one of {sorted(CHASSIS_MODES)}")
        if self.tire_mode not in TIRE_MODES:
            raise ValueError(f"tire_mode must be one of {sorted(TIRE_MODES)}")
        dt_mpc = self.controller.dt_mpc
        if not 0 < self.dt_plant <= dt_mpc:
            raise ValueError(f"dt_plant must be in (0, dt_mpc={dt_mpc}]")
        ratio = dt_mpc / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"dt_mpc ({dt_mpc}) must be an integer multiple of dt_plant ({self.dt_plant})")
        path_T = make_path(self.path).duration
        if self.duration is None:
            object.__setattr__(self, "duration",
                               math.floor((path_T - self.controller.horizon) / dt_mpc + 1e-9) * dt_mpc)
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.duration + self.controller.horizon > path_T + 1e-9:
            raise ValueError(
                f"duration {self.duration} s plus prediction horizon {self.controller.horizon} s "
                f"exceeds the reference length {path_T:.3f} s")
        if self.width_noise < 0 or self.lookahead <= 0 or self.reconverge_band <= 0:
            raise ValueError("width_noise must be >= 0; lookahead and reconverge_band > 0")

    @property
    def steps_per_tick(self) -> int:
        return int(round(self.controller.dt_mpc / self.dt_plant))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.controller.dt_mpc))


@dataclass(frozen=True)
class Detection:
    index: int
    width: float
    height: float
    distance: float


@dataclass
class SolveRecord:
    t: float
    iterations: int
    cost_history: list[float]
    converged: bool
    failed: bool


@dataclass
class TrajectoryLog:
    data: np.ndarray                       # (n, len(COLUMNS))
    omega_w: np.ndarray | None = None      # (n, 4) wheel speeds, not part of the CSV
    behaviors: tuple[Behavior, ...] = ()
    solves: list[SolveRecord] = field(default_factory=list)
    status: str = "ok"                     # ok | solver-failure | diverged
    message: str = ""

    def __len__(self):
        return len(self.data)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, COL[name]]

    def cols(self, names) -> np.ndarray:
        return self.data[:, [COL[n] for n in names]]

    def to_csv(self, path=None, include_timing: bool = True) -> str:
        data = self.data
        if not include_timing:
            data = data.copy()
            data[:, COL["solve_time"]] = 0.0
        buf = io.StringIO()
        np.savetxt(buf, data, delimiter=",", fmt="%.17g", header=",".join(COLUMNS), comments="")
        text = buf.getvalue()
        if path is not None:
            FsPath(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        text = FsPath(path).read_text()
        header = text.split("\n", 1)[0].strip().split(",")
        if header != COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header")
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        return cls(data)


@dataclass
class Metrics:
    max_abs_Xe: float
    max_abs_Ye: float
    max_abs_yaw_deg: float
    mean_solve_time: float
    max_solve_time: float
    gamma_intervals: list[tuple[float, float]]
    reconvergence_times: list[float]
    max_abs_Ye_during_gamma: float = 0.0

    def summary_lines(self) -> list[str]:
        return [
            f"max_abs_Xe: {self.max_abs_Xe:.4f} m",
            f"max_abs_Ye: {self.max_abs_Ye:.4f} m",
            f"max_abs_yaw_error: {self.max_abs_yaw_deg:.3f} deg",
            f"mean_cycle_time: {self.mean_solve_time * 1e3:.2f} ms",
        ]

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [("max_abs_Xe_m", self.max_abs_Xe), ("max_abs_Ye_m", self.max_abs_Ye),
                ("max_abs_yaw_deg", self.max_abs_yaw_deg),
                ("mean_solve_time_s", self.mean_solve_time),
                ("max_solve_time_s", self.max_solve_time),
                ("gamma_episodes", len(self.gamma_intervals)),
                ("max_abs_Ye_during_gamma_m", self.max_abs_Ye_during_gamma)]
        for i, ((a, b), rc) in enumerate(zip(self.gamma_intervals, self.reconvergence_times), 1):
            rows += [(f"gamma{i}_start_s", a), (f"gamma{i}_end_s", b), (f"gamma{i}_reconvergence_s", rc)]
        return rows

    def to_text(self) -> str:
        return "".join(f"{k}: {v!r}\n" for k, v in self.as_rows())

    def to_csv(self) -> str:
        return "metric,value\n" + "".join(f"{k},{float(v)!r}\n" for k, v in self.as_rows())


# ---------------------------------------------------------------------------


def initial_state(scenario: ScenarioConfig) -> np.ndarray:
    """Robot placed on the reference at t=0, rolling at the reference speed."""
    ref = make_path(scenario.path).sample([0.0])
    v = float(ref.v_ref[0])
    w = v * float(ref.K[0]) * float(ref.C_d[0])
    x = np.zeros(model.NX)
    x[:6] = [ref.X_ref[0], ref.Y_ref[0], model.wrap_angle(float(ref.theta_ref[0])), v, 0.0, w]
    x[model.IWHEEL:] = v / scenario.robot.r
    return x


def perception_probe(scenario: ScenarioConfig, state, lookahead: float | None = None,
                     rng: np.random.Generator | None = None, exclude=()) -> Detection | None:
    """Oracle obstacle sensing: nearest obstacle ahead within ``lookahead``.

    ``state`` is a full state vector or anything with ``X``/``Y`` attributes.
    Width noise (``scenario.width_noise``) is drawn from ``rng``.
    """
    if lookahead is None:
        lookahead = scenario.lookahead
    X, Y = (state[0], state[1]) if not hasattr(state, "X") else (state.X, state.Y)
    s_robot = make_path(scenario.path).project(float(X), float(Y))
    best = None
    for i, obs in enumerate(scenario.obstacles):
        if i in exclude:
            continue
        dist = obs.s_position - s_robot
        if 0.0 < dist <= lookahead and (best is None or dist < best[1]):
            best = (i, dist)
    if best is None:
        return None
    i, dist = best
    obs = scenario.obstacles[i]
    width = obs.width
    if scenario.width_noise > 0:
        if rng is None:
            rng = np.random.default_rng(scenario.seed)
        width = max(1e-3, width + scenario.width_noise * float(rng.standard_normal()))
    return Detection(i, width, obs.height, dist)


def run_closed_loop(scenario: ScenarioConfig, progress=None) -> TrajectoryLog:
    path = make_path(scenario.path)
    params, cfg = scenario.robot, scenario.controller
    P = params.packed()
    cmode = CHASSIS_MODES[scenario.chassis_mode]
    tmode = TIRE_MODES[scenario.tire_mode]
    nsub, dt = scenario.steps_per_tick, scenario.dt_plant
    n_ticks = scenario.n_ticks
    rng = np.random.default_rng(scenario.seed)
    t_total = scenario.duration + cfg.horizon

    x = initial_state(scenario)
    known: dict[int, tuple[Obstacle, float]] = {}
    schedule = build_schedule([], path, scenario.lookahead, params, scenario.behavior, t_total)
    rows = np.zeros((n_ticks * nsub, len(COLUMNS)))
    wheels = np.zeros((n_ticks * nsub, 4))
    solves: list[SolveRecord] = []
    warm: MpcSolution | None = None
    u_hold = np.zeros(model.NU)
    status, message = "ok", ""
    n = 0

    for tick in range(n_ticks):
        k0 = tick * nsub
        t_tick = k0 * dt
        det = perception_probe(scenario, x, rng=rng, exclude=known)
        if det is not None:
            src = scenario.obstacles[det.index]
            known[det.index] = (Obstacle(src.s_position, det.width, det.height, src.length), t_tick)
            order = sorted(known.values(), key=lambda kv: kv[0].s_position)
            schedule = build_schedule([o for o, _ in order], path, scenario.lookahead, params,
                                      scenario.behavior, t_total,
                                      detect_times=[ts for _, ts in order], quantum=cfg.dt_mpc)
        hz = build_horizon(k0, schedule, path, cfg, params, dt)
        sol = solve(x, hz, cfg, params, warm, cmode, tmode)
        solves.append(SolveRecord(t_tick, sol.iterations, sol.cost_history, sol.converged, sol.failed))
        if sol.failed:
            status = "solver-failure"
            message = f"solver failure at t={t_tick:.3f} s: {sol.message}"
            u = u_hold
        else:
            u = sol.u_sequence[0].copy()
            warm = sol
            u_hold = u
        solve_time = sol.solve_time if scenario.record_timing else 0.0
        ref = path.sample((k0 + np.arange(nsub)) * dt)
        for m in range(nsub):
            k = k0 + m
            row = rows[n]
            row[COL["t"]] = k * dt
            row[COL["X_ref"]], row[COL["Y_ref"]] = ref.X_ref[m], ref.Y_ref[m]
            row[COL["theta_ref"]] = model.wrap_angle(float(ref.theta_ref[m]))
            row[COL["X"]:COL["omega_r"] + 1] = x[:6]
            row[COL["d"]] = hz.d[m]
            row[COL["gamma"]] = schedule.gamma(k * dt)
            row[COL["u1"]:COL["u4"] + 1] = u
            row[COL["delta1"]:COL["delta4"] + 1] = hz.steer[m]
            row[COL["lambda1"]:COL["lambda4"] + 1] = model._slip_vector(x, params.r)
            row[COL["solve_time"]] = solve_time
            wheels[n] = x[model.IWHEEL:]
            n += 1
            try:
                x = model.step_vector(x, u, hz.steer[m], hz.d[m], dt, P, cmode, tmode)
            except IntegrationError as exc:
                status, message = "diverged", str(exc)
                break
        if status == "diverged":
            break
        if progress is not None:
            progress(tick + 1, n_ticks)

    return TrajectoryLog(rows[:n], wheels[:n], schedule.behaviors, solves, status, message)


def replay_inputs(log: TrajectoryLog, scenario: ScenarioConfig, omega_w0=None) -> np.ndarray:
    """Drive the plant open-loop with the logged inputs, steering and track width.

    Returns the full state at the start of every logged step, so row ``k``
    is directly comparable with log row ``k``.
    """
    P = scenario.robot.packed()
    cmode = CHASSIS_MODES[scenario.chassis_mode]
    tmode = TIRE_MODES[scenario.tire_mode]
    x = np.zeros(model.NX)
    x[:6] = log.cols(STATE_COLUMNS)[0]
    if omega_w0 is None:
        omega_w0 = log.omega_w[0] if log.omega_w is not None else x[model.IVX] / scenario.robot.r
    x[model.IWHEEL:] = omega_w0
    u = log.cols([f"u{i}" for i in range(1, 5)])
    steer = log.cols([f"delta{i}" for i in range(1, 5)])
    d = log["d"]
    out = np.empty((len(log), model.NX))
    out[0] = x
    for k in range(len(log) - 1):
        x = model.step_vector(x, u[k], steer[k], d[k], scenario.dt_plant, P, cmode, tmode)
        out[k + 1] = x
    return out


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of the True runs in a boolean array."""
    edges = np.diff(np.concatenate(([0], mask.astype(int), [0])))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def compute_metrics(log: TrajectoryLog, band: float = 0.05) -> Metrics:
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    t = log["t"]
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    Xe = log["X"] - log["X_ref"]
    Ye = log["Y"] - log["Y_ref"]
    yaw = model.wrap_angle(log["theta"] - log["theta_ref"])
    st = log["solve_time"]
    episodes, reconv = [], []
    peak_gamma = 0.0
    for a, b in _runs(log["gamma"] > 0.5):
        t_end = float(t[b - 1] + dt)
        episodes.append((float(t[a]), t_end))
        peak_gamma = max(peak_gamma, float(np.max(np.abs(Ye[a:b]))))
        outside = np.flatnonzero(np.abs(Ye[b:]) > band)
        reconv.append(0.0 if len(outside) == 0 else float(t[b + outside[-1]] + dt - t_end))
    return Metrics(float(np.max(np.abs(Xe))), float(np.max(np.abs(Ye))),
                   float(np.degrees(np.max(np.abs(yaw)))), float(np.mean(st)), float(np.max(st)),
                   episodes, reconv, peak_gamma)


@dataclass
class Comparison:
    deltas: dict[str, float]        # b - a per axis
    ratios: dict[str, float]        # b / a per axis
    solve_time_ratio: float         # mean(b) / mean(a)
    accuracy_verdict: str           # "a", "b", "tie" or "mixed": which run tracks better
    speed_verdict: str              # "a", "b" or "tie": which run solves faster
    metrics_a: Metrics
    metrics_b: Metrics

    def lines(self, label_a: str = "a", label_b: str = "b") -> list[str]:
        names = {"a": label_a, "b": label_b, "tie": "tie", "mixed": "mixed"}
        out = [f"{k}: delta={self.deltas[k]:+.4f} ratio={self.ratios[k]:.3f}" for k in self.deltas]
        out.append(f"solve_time_ratio: {self.solve_time_ratio:.3f}")
        out.append(f"more_accurate: {names[self.accuracy_verdict]}")
        out.append(f"faster: {names[self.speed_verdict]}")
        return out


def _ratio(b, a):
    if a == 0.0:
        return 1.0 if b == 0.0 else math.inf
    return b / a


def compare_runs(log_a: TrajectoryLog, log_b: TrajectoryLog, band: float = 0.05) -> Comparison:
    refs = ["t", "X_ref", "Y_ref"]
    if len(log_a) != len(log_b) or not np.allclose(log_a.cols(refs), log_b.cols(refs),
                                                    rtol=0, atol=1e-9):
        raise ValueError("runs do not share the same reference path and timing")
    ma, mb = compute_metrics(log_a, band), compute_metrics(log_b, band)
    axes = {"max_abs_Xe": "max_abs_Xe", "max_abs_Ye": "max_abs_Ye", "max_abs_yaw_deg": "max_abs_yaw_deg"}
    va = {k: getattr(ma, f) for k, f in axes.items()}
    vb = {k: getattr(mb, f) for k, f in axes.items()}
    deltas = {k: vb[k] - va[k] for k in axes}
    ratios = {k: _ratio(vb[k], va[k]) for k in axes}
    if all(va[k] == vb[k] for k in axes):
        acc = "tie"
    elif all(va[k] <= vb[k] for k in axes):
        acc = "a"
    elif all(vb[k] <= va[k] for k in axes):
        acc = "b"
    else:
        acc = "mixed"
    if ma.mean_solve_time == mb.mean_solve_time:
        speed = "tie"
    else:
        speed = "a" if ma.mean_solve_time < mb.mean_solve_time else "b"
    return Comparison(deltas, ratios, _ratio(mb.mean_solve_time, ma.mean_solve_time), acc, speed, ma, mb)
