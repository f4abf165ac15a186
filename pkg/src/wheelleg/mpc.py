"""Behavior-switched receding-horizon controller over the four motor inputs.

The prediction model is the plant itself (same compiled RK4 kernel, same
plant step), held per controller period. Decision variables are ``N_c``
input blocks; the last block is held to the end of the ``N_p``-step horizon.
The horizon is split at behavior switch times and each piece contributes a
running cost plus a terminal cost on the tracking error at its end.

The optimizer is a projected Gauss-Newton descent: step Jacobians of each
controller-period map by forward differences, chained into input
sensitivities, a box-constrained quadratic subproblem per iterate, and
backtracking on the true cost. Every accepted iterate lowers the cost.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from .behavior import BehaviorSchedule
from .model import IVX, IVY, NU, NX, PHYSICAL, STANDARD
from .params import RobotParams
from .reference import Path

V_MAX = 10.0 / 3.6  # m/s, robot top speed


@dataclass(frozen=True)
class MpcConfig:
    N_p: int = 60
    N_c: int = 30
    dt_mpc: float = 0.05
    Q: tuple[float, float, float] = (1.0, 10.0, 5.0)   # X, Y, yaw error
    R: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    S: tuple[float, float, float] | None = None         # default 10 * Q
    u_min: tuple[float, float, float, float] = (-10.0,) * 4
    u_max: tuple[float, float, float, float] = (10.0,) * 4
    max_iterations: int = 10
    tolerance: float = 1e-3
    v_max: float = V_MAX
    penalty: float = 1e3

    def __post_init__(self):
        def vec(name, n):
            v = tuple(float(x) for x in np.broadcast_to(getattr(self, name), (n,)))
            object.__setattr__(self, name, v)
            return v
        Q, R = vec("Q", 3), vec("R", 4)
        if self.S is None:
            object.__setattr__(self, "S", tuple(10.0 * q for q in Q))
        S = vec("S", 3)
        lo, hi = vec("u_min", 4), vec("u_max", 4)
        if not (isinstance(self.N_p, int) and isinstance(self.N_c, int)):
            raise ValueError("N_p and N_c must be integers")
        if not self.N_p >= self.N_c >= 1:
            raise ValueError(f"need N_p >= N_c >= 1, got N_p={self.N_p}, N_c={self.N_c}")
        if not self.dt_mpc > 0:
            raise ValueError("dt_mpc must be > 0")
        if min(Q) <= 0 or min(R) <= 0 or min(S) < 0:
            raise ValueError("Q and R entries must be > 0, S entries >= 0")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("u_min must be < u_max for every input")
        if self.max_iterations < 1 or not self.tolerance > 0:
            raise ValueError("max_iterations must be >= 1 and tolerance > 0")

    @property
    def horizon(self) -> float:
        return self.N_p * self.dt_mpc


@dataclass
class MpcSolution:
    u_sequence: np.ndarray            # (N_c, 4)
    predicted_trajectory: np.ndarray  # (N_p, 10) states at controller-period ends
    cost: float
    iterations: int
    solve_time: float
    cost_history: list[float] = field(default_factory=list)
    converged: bool = True
    failed: bool = False
    message: str = ""


@dataclass(frozen=True)
class Horizon:
    """Everything the prediction needs that does not depend on the state."""
    k0: int                   # plant-step index of the horizon start
    dt_plant: float
    nsub: int                 # plant steps per controller period
    t: np.ndarray             # (N_p,) controller-period end times
    ref: np.ndarray           # (N_p, 3) X, Y, yaw targets at those times
    steer: np.ndarray         # (N_p*nsub, 4) steering per plant step
    d: np.ndarray             # (N_p*nsub,) track width per plant step
    segment_ends: tuple[int, ...]  # step counts (1..N_p) where a behavior piece ends

    @property
    def t0(self) -> float:
        return self.k0 * self.dt_plant


def horizon_end(t_j: float, delta_t: float, next_switch: float | None) -> float:
    if not delta_t > 0:
        raise ValueError("delta_t must be > 0")
    if next_switch is not None and t_j < next_switch <= t_j + delta_t:
        return next_switch
    return t_j + delta_t


def project_inputs(u, U) -> np.ndarray:
    """Clamp each input to its bounds; ``U`` is (lo, hi) or a (4, 2) table."""
    U = np.asarray(U, dtype=float)
    lo, hi = (U[:, 0], U[:, 1]) if U.ndim == 2 else (U[0], U[1])
    return np.clip(np.asarray(u, dtype=float), lo, hi)


def state_constraint_check(v_x: float, v_y: float, d: float, config: MpcConfig,
                           params: RobotParams) -> bool:
    speed_ok = math.hypot(v_x, v_y) <= config.v_max
    width_ok = params.d0 - 1e-12 <= d <= params.d_max + 1e-12
    return speed_ok and width_ok


def behavior_cost(errors, inputs, terminal_error, config: MpcConfig) -> float:
    """Discretized running cost over one behavior piece plus its terminal term."""
    e = np.atleast_2d(np.asarray(errors, dtype=float))
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    eT = np.asarray(terminal_error, dtype=float)
    if e.shape[1] != 3 or u.shape[1] != NU or eT.shape != (3,) or len(e) != len(u):
        raise ValueError(f"dimension mismatch: errors {e.shape}, inputs {u.shape}, terminal {eT.shape}")
    Q, R, S = (np.asarray(w) for w in (config.Q, config.R, config.S))
    running = np.sum(e * e * Q) + np.sum(u * u * R)
    return float(running * config.dt_mpc + np.sum(eT * eT * S))


def build_horizon(k0: int, schedule: BehaviorSchedule, path: Path, config: MpcConfig,
                  params: RobotParams, dt_plant: float) -> Horizon:
    nsub = int(round(config.dt_mpc / dt_plant))
    n = config.N_p * nsub
    sub_t = (k0 + np.arange(n)) * dt_plant
    end_t = (k0 + nsub * np.arange(1, config.N_p + 1)) * dt_plant
    rs = path.sample(sub_t)
    re = path.sample(end_t)
    d = np.asarray(schedule.width(sub_t), dtype=float)
    steer = model._ackermann_profile(rs.K, rs.C_d.astype(float), params.l, d)
    ref = np.column_stack([re.X_ref, re.Y_ref, re.theta_ref])

    t0, t_stop = k0 * dt_plant, k0 * dt_plant + config.horizon
    ends, t = [], t0
    while t < t_stop - 1e-9:
        t = horizon_end(t, t_stop - t, schedule.next_switch(t))
        ends.append(min(config.N_p, max(1, int(round((t - t0) / config.dt_mpc)))))
    return Horizon(k0, dt_plant, nsub, end_t, ref, steer, d, tuple(sorted(set(ends))))


def input_steps(U: np.ndarray, N_p: int) -> np.ndarray:
    """Expand N_c input blocks to N_p per-period inputs (last block held)."""
    return U[np.minimum(np.arange(N_p), len(U) - 1)]


class _Problem:
    """Residual form of the horizon cost, ``J = ||r||^2``."""

    def __init__(self, x0, hz: Horizon, config: MpcConfig, params: RobotParams,
                 cmode: int, tmode: int):
        self.x0 = np.asarray(x0, dtype=float)
        self.hz, self.cfg = hz, config
        self.P = params.packed()
        self.modes = (cmode, tmode)
        dt = config.dt_mpc
        self.wq = np.sqrt(dt * np.asarray(config.Q))
        self.wr = np.sqrt(dt * np.asarray(config.R))
        self.ws = np.sqrt(np.asarray(config.S))
        self.wp = math.sqrt(dt * config.penalty)
        self.ends = np.asarray(hz.segment_ends) - 1  # row index into states[1:]

    def rollout(self, U):
        u_steps = input_steps(U, self.cfg.N_p)
        xs = model._rollout(self.x0, u_steps, self.hz.steer, self.hz.d, self.hz.nsub,
                            self.hz.dt_plant, self.P, *self.modes)
        return u_steps, xs

    def errors(self, xs):
        e = xs[1:, :3] - self.hz.ref
        e[:, 2] = model.wrap_angle(e[:, 2])
        return e

    def residuals(self, U, jac=False):
        u_steps, xs = self.rollout(U)
        e = self.errors(xs)
        speed = np.hypot(xs[1:, IVX], xs[1:, IVY])
        viol = np.maximum(0.0, speed - self.cfg.v_max)
        r = np.concatenate([(e * self.wq).ravel(), (u_steps * self.wr).ravel(),
                            (e[self.ends] * self.ws).ravel(), self.wp * viol])
        if not jac:
            return r, None, xs
        return r, self._jacobian(xs, u_steps, speed, viol), xs

    def _jacobian(self, xs, u_steps, speed, viol):
        cfg, hz = self.cfg, self.hz
        Np, Nc = cfg.N_p, cfg.N_c
        nU = Nc * NU
        A, B = model._step_jacobians(xs, u_steps, hz.steer, hz.d, hz.nsub, hz.dt_plant,
                                     self.P, *self.modes)
        sens = np.zeros((Np + 1, NX, nU))
        for j in range(Np):
            blk = min(j, Nc - 1) * NU
            sens[j + 1] = A[j] @ sens[j]
            sens[j + 1][:, blk:blk + NU] += B[j]
        S = sens[1:]
        J_e = (S[:, :3, :] * self.wq[None, :, None]).reshape(Np * 3, nU)
        J_u = np.zeros((Np, NU, nU))
        for j in range(Np):
            blk = min(j, Nc - 1) * NU
            J_u[j, :, blk:blk + NU] = np.diag(self.wr)
        J_t = (S[self.ends, :3, :] * self.ws[None, :, None]).reshape(len(self.ends) * 3, nU)
        J_p = np.zeros((Np, nU))
        active = viol > 0
        if np.any(active):
            sp = speed[active][:, None]
            J_p[active] = self.wp * (xs[1:, IVX][active][:, None] / sp * S[active, IVX]
                                     + xs[1:, IVY][active][:, None] / sp * S[active, IVY])
        return np.vstack([J_e, J_u.reshape(Np * NU, nU), J_t, J_p])


def solve_box_qp(H, g, lo, hi, x0=None, max_iter: int = 200, tol: float = 1e-12):
    """Minimize ``0.5 x'Hx + g'x`` over the box ``lo <= x <= hi`` (H positive definite).

    Projected Newton: Newton step on the variables not held at a bound,
    Armijo backtracking along the projection arc.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    x = np.clip(np.zeros_like(g) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    scale = 1.0 + np.max(np.abs(g), initial=0.0)

    def q(z):
        return 0.5 * z @ H @ z + g @ z

    for _ in range(max_iter):
        grad = H @ x + g
        if np.max(np.abs(x - np.clip(x - grad, lo, hi)), initial=0.0) <= tol * scale:
            break
        held = ((x <= lo) & (grad > 0)) | ((x >= hi) & (grad < 0))
        free = ~held
        p = np.zeros_like(x)
        p[free] = -np.linalg.solve(H[np.ix_(free, free)], grad[free])
        fx, alpha = q(x), 1.0
        while True:
            xn = np.clip(x + alpha * p, lo, hi)
            if q(xn) <= fx + 1e-4 * (grad @ (xn - x)):
                break
            alpha *= 0.5
            if alpha < 1e-14:
                xn = x
                break
        if np.array_equal(xn, x):
            break
        x = xn
    return x


@dataclass
class OptResult:
    x: np.ndarray
    cost: float
    history: list[float]
    iterations: int
    converged: bool
    failed: bool
    message: str = ""


def projected_gauss_newton(residual_fn, x0, lo, hi, max_iterations: int = 10,
                           tolerance: float = 1e-3) -> OptResult:
    """Minimize ``||r(x)||^2`` over a box.

    ``residual_fn(x, jac)`` returns ``(r, J)`` with ``J`` only when asked.
    Iterates are projected onto the box; steps are accepted only when the
    cost decreases (Armijo), so the accepted-cost history is non-increasing.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    r, J = residual_fn(x, True)
    cost = float(r @ r)
    history = [cost]
    if not np.isfinite(cost):
        return OptResult(x, cost, history, 0, False, True, "non-finite cost at start")
    for it in range(1, max_iterations + 1):
        H = J.T @ J
        g = J.T @ r
        step = solve_box_qp(H, g, lo - x, hi - x)
        slope = 2.0 * (g @ step)
        predicted = -(slope + step @ H @ step)
        if predicted <= tolerance * 1e-3 * max(cost, 1e-300) or not np.any(step):
            return OptResult(x, cost, history, it - 1, True, False, "stationary")
        alpha = 1.0
        while alpha > 1e-6:
            x_try = np.clip(x + alpha * step, lo, hi)
            r_try, _ = residual_fn(x_try, False)
            c_try = float(r_try @ r_try)
            if np.isfinite(c_try) and c_try <= cost + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            return OptResult(x, cost, history, it - 1, True, False, "no descent along step")
        decrease = cost - c_try
        x = x_try
        cost = c_try
        history.append(cost)
        if decrease <= tolerance * cost:
            return OptResult(x, cost, history, it, True, False, "relative decrease below tolerance")
        r, J = residual_fn(x, True)
        if not np.all(np.isfinite(J)):
            return OptResult(x, cost, history, it, False, True, "non-finite Jacobian")
    return OptResult(x, cost, history, max_iterations, False, False, "max_iterations reached")


def shift_warm_start(previous: MpcSolution, N_c: int) -> np.ndarray:
    U = np.asarray(previous.u_sequence, dtype=float)
    U = np.vstack([U[1:], U[-1:]]) if len(U) > 1 else U.copy()
    if len(U) < N_c:
        U = np.vstack([U, np.repeat(U[-1:], N_c - len(U), axis=0)])
    return U[:N_c]


def solve(x_now, horizon: Horizon, config: MpcConfig, params: RobotParams,
          warm_start: MpcSolution | None = None, chassis_mode: int = PHYSICAL,
          tire_mode: int = STANDARD) -> MpcSolution:
    """Optimize the input sequence for one controller tick."""
    t_start = time.perf_counter()
    prob = _Problem(x_now, horizon, config, params, chassis_mode, tire_mode)
    Nc = config.N_c
    lo = np.tile(config.u_min, Nc)
    hi = np.tile(config.u_max, Nc)
    U0 = np.zeros((Nc, NU)) if warm_start is None else shift_warm_start(warm_start, Nc)

    def fn(z, jac):
        r, J, _ = prob.residuals(z.reshape(Nc, NU), jac)
        return r, J

    try:
        res = projected_gauss_newton(fn, U0.ravel(), lo, hi, config.max_iterations,
                                     config.tolerance)
    except FloatingPointError as exc:  # pragma: no cover - numpy configured to raise
        res = OptResult(np.clip(U0.ravel(), lo, hi), math.inf, [], 0, False, True, str(exc))
    U = project_inputs(res.x.reshape(Nc, NU), np.column_stack([config.u_min, config.u_max]))
    _, xs = prob.rollout(U)
    return MpcSolution(U, xs[1:], res.cost, res.iterations, time.perf_counter() - t_start,
                       res.history, res.converged, res.failed, res.message)


def solution_cost_breakdown(x_now, horizon: Horizon, U, config: MpcConfig,
                            params: RobotParams, chassis_mode: int = PHYSICAL,
                            tire_mode: int = STANDARD) -> list[float]:
    """Per-behavior-piece costs of an input sequence (excludes the speed penalty)."""
    prob = _Problem(x_now, horizon, config, params, chassis_mode, tire_mode)
    u_steps, xs = prob.rollout(np.asarray(U, dtype=float))
    e = prob.errors(xs)
    out, start = [], 0
    for end in horizon.segment_ends:
        out.append(behavior_cost(e[start:end], u_steps[start:end], e[end - 1], config))
        start = end
    return out
