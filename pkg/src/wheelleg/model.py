"""Planar (3-DOF) chassis, single-wheel and Burckhardt tire dynamics.

The formulas live in numba kernels (``_``-prefixed) so the closed-loop plant
and the controller's prediction rollouts execute the very same code; the
public functions below are thin, validated wrappers over them.

Wheel numbering: 1 front-left, 2 rear-left, 3 front-right, 4 rear-right.
Body frame: x forward, y to the left, yaw counter-clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .params import (P_BV, P_C1, P_C2, P_C3, P_G, P_I, P_JW, P_K, P_L, P_M,
                     P_R, P_TC, RobotParams)

EPS = 1e-6
TWO_PI = 2.0 * math.pi

PHYSICAL = 0
LITERAL = 1
STANDARD = 0

CHASSIS_MODES = {"physical": PHYSICAL, "literal": LITERAL}
TIRE_MODES = {"standard": STANDARD, "literal": LITERAL}

# full state vector layout
IX, IY, ITH, IVX, IVY, IW = 0, 1, 2, 3, 4, 5
IWHEEL = 6
NX = 10
NU = 4

# corner positions (sign of x, sign of y) in wheel order 1..4
_CORNER_SX = np.array([1.0, -1.0, 1.0, -1.0])
_CORNER_SY = np.array([1.0, 1.0, -1.0, -1.0])


class ModelDomainError(ValueError):
    """Input outside the domain of a model formula."""


class IntegrationError(RuntimeError):
    """The plant produced a non-finite state."""


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _wrap(a):
    w = (a + math.pi) % TWO_PI - math.pi
    if w == -math.pi:
        w = math.pi
    return w


@njit(cache=True)
def _sign(v):
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def _ackermann(K, Cd, l, d, out):
    if K == 0.0 or Cd == 0.0:
        for i in range(4):
            out[i] = 0.0
        return
    den_a = 2.0 - d * K * Cd
    den_b = 2.0 + d * K * Cd
    if den_a <= 0.0 or den_b <= 0.0:
        raise ValueError("turning radius infeasible for current track width")
    # magnitudes as in the Ackermann relation; C_d sets the side of the turn
    d1 = Cd * math.atan(l * K / den_a)
    d3 = Cd * math.atan(l * K / den_b)
    out[0] = d1
    out[1] = -d1
    out[2] = d3
    out[3] = -d3


@njit(cache=True)
def _sideslip(vx, vy, w, steer, l, d, out):
    den12 = 2.0 * vx - d * w
    den34 = 2.0 * vx + d * w
    num_p = 2.0 * vy + l * w
    num_m = 2.0 * vy - l * w
    out[0] = steer[0] - num_p / den12 if abs(den12) >= EPS else steer[0]
    out[1] = steer[1] - num_m / den12 if abs(den12) >= EPS else steer[1]
    out[2] = steer[2] - num_p / den34 if abs(den34) >= EPS else steer[2]
    out[3] = steer[3] - num_m / den34 if abs(den34) >= EPS else steer[3]


@njit(cache=True)
def _slip(omega_w, vx, r):
    rim = omega_w * r
    if max(abs(rim), abs(vx)) < EPS:
        return 0.0
    den = max(rim, vx)
    num = rim - vx
    if abs(den) < EPS:
        return _sign(num)
    lam = num / den
    if lam > 1.0:
        return 1.0
    if lam < -1.0:
        return -1.0
    return lam


@njit(cache=True)
def _tire(Fz, lam, alpha, c1, c2, c3, mode):
    ta = math.tan(alpha)
    s = math.sqrt(lam * lam + ta * ta)
    if mode == STANDARD:
        Ft = Fz * (c1 * (1.0 - math.exp(-c2 * s)) - c3 * s)
    else:
        Ft = Fz * c1 * (1.0 - math.exp(c2 * s)) - c3 * s
    if s < EPS:
        return Ft, 0.0, 0.0
    return Ft, lam / s * Ft, ta / s * Ft


@njit(cache=True)
def _chassis_accel(vx, vy, w, Fx, Fy, steer, m, I, l, d, mode, out):
    sx = 0.0
    sy = 0.0
    mz = 0.0
    if mode == PHYSICAL:
        hl = 0.5 * l
        hd = 0.5 * d
        for i in range(4):
            c = math.cos(steer[i])
            s = math.sin(steer[i])
            fbx = Fx[i] * c - Fy[i] * s
            fby = Fx[i] * s + Fy[i] * c
            sx += fbx
            sy += fby
            mz += _CORNER_SX[i] * hl * fby - _CORNER_SY[i] * hd * fbx
    else:
        dg = math.atan(l / d)
        for i in range(4):
            c = math.cos(steer[i])
            s = math.sin(steer[i])
            sx += Fx[i] * c + Fy[i] * s
            sy += Fx[i] * s + Fy[i] * c
            mz += Fx[i] * math.cos(steer[i] - dg) + Fy[i] * math.sin(steer[i] - dg)
        mz *= 0.5 * math.sqrt(l * l + d * d)
    out[0] = sx / m + w * vy
    out[1] = sy / m - w * vx
    out[2] = mz / I


@njit(cache=True)
def _wheel_accel(u, omega_w, Fx, k, t_coulomb, b_visc, r, J_w):
    Ts = b_visc * omega_w + t_coulomb * _sign(omega_w)
    return (k * u - Ts - Fx * r) / J_w


@njit(cache=True)
def _tire_state(x, steer, d, P, tmode, lam, alpha, Fx, Fy):
    _sideslip(x[IVX], x[IVY], x[IW], steer, P[P_L], d, alpha)
    Fz = P[P_M] * P[P_G] / 4.0
    for i in range(4):
        lam[i] = _slip(x[IWHEEL + i], x[IVX], P[P_R])
        _, Fx[i], Fy[i] = _tire(Fz, lam[i], alpha[i], P[P_C1], P[P_C2], P[P_C3], tmode)


@njit(cache=True)
def _rhs(x, u, steer, d, P, cmode, tmode, out):
    lam = np.empty(4)
    alpha = np.empty(4)
    Fx = np.empty(4)
    Fy = np.empty(4)
    acc = np.empty(3)
    _tire_state(x, steer, d, P, tmode, lam, alpha, Fx, Fy)
    _chassis_accel(x[IVX], x[IVY], x[IW], Fx, Fy, steer, P[P_M], P[P_I], P[P_L], d, cmode, acc)
    c = math.cos(x[ITH])
    s = math.sin(x[ITH])
    out[IX] = x[IVX] * c - x[IVY] * s
    out[IY] = x[IVX] * s + x[IVY] * c
    out[ITH] = x[IW]
    out[IVX] = acc[0]
    out[IVY] = acc[1]
    out[IW] = acc[2]
    for i in range(4):
        out[IWHEEL + i] = _wheel_accel(u[i], x[IWHEEL + i], Fx[i], P[P_K + i],
                                       P[P_TC], P[P_BV], P[P_R], P[P_JW])


@njit(cache=True)
def _rk4(x, u, steer, d, dt, P, cmode, tmode, out):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    _rhs(x, u, steer, d, P, cmode, tmode, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _rhs(tmp, u, steer, d, P, cmode, tmode, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _rhs(tmp, u, steer, d, P, cmode, tmode, k3)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    _rhs(tmp, u, steer, d, P, cmode, tmode, k4)
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    out[ITH] = _wrap(out[ITH])


@njit(cache=True)
def _advance(x, u, steer, dvals, start, nsub, dt, P, cmode, tmode, out):
    """Apply ``nsub`` plant steps with input ``u`` from substep ``start`` on."""
    cur = x.copy()
    for k in range(start, start + nsub):
        _rk4(cur, u, steer[k], dvals[k], dt, P, cmode, tmode, out)
        cur[:] = out


@njit(cache=True)
def _rollout(x0, u_steps, steer, dvals, nsub, dt, P, cmode, tmode):
    n_steps = u_steps.shape[0]
    xs = np.empty((n_steps + 1, x0.shape[0]))
    xs[0] = x0
    out = np.empty(x0.shape[0])
    for j in range(n_steps):
        _advance(xs[j], u_steps[j], steer, dvals, j * nsub, nsub, dt, P, cmode, tmode, out)
        xs[j + 1] = out
    return xs


@njit(cache=True)
def _step_jacobians(xs, u_steps, steer, dvals, nsub, dt, P, cmode, tmode):
    """Forward-difference Jacobians of each controller-period map."""
    n_steps = u_steps.shape[0]
    nx = xs.shape[1]
    nu = u_steps.shape[1]
    A = np.empty((n_steps, nx, nx))
    B = np.empty((n_steps, nx, nu))
    out = np.empty(nx)
    for j in range(n_steps):
        base = xs[j]
        nominal = xs[j + 1]
        for c in range(nx):
            h = 1e-7 * max(1.0, abs(base[c]))
            xp = base.copy()
            xp[c] += h
            _advance(xp, u_steps[j], steer, dvals, j * nsub, nsub, dt, P, cmode, tmode, out)
            for i in range(nx):
                A[j, i, c] = (out[i] - nominal[i]) / h
            A[j, ITH, c] = _wrap(out[ITH] - nominal[ITH]) / h
        for c in range(nu):
            h = 1e-7 * max(1.0, abs(u_steps[j, c]))
            up = u_steps[j].copy()
            up[c] += h
            _advance(base, up, steer, dvals, j * nsub, nsub, dt, P, cmode, tmode, out)
            for i in range(nx):
                B[j, i, c] = (out[i] - nominal[i]) / h
            B[j, ITH, c] = _wrap(out[ITH] - nominal[ITH]) / h
    return A, B


@njit(cache=True)
def _slip_vector(x, r):
    lam = np.empty(4)
    for i in range(4):
        lam[i] = _slip(x[IWHEEL + i], x[IVX], r)
    return lam


@njit(cache=True)
def _ackermann_profile(K, Cd, l, dvals):
    out = np.empty((K.shape[0], 4))
    for k in range(K.shape[0]):
        _ackermann(K[k], Cd[k], l, dvals[k], out[k])
    return out


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class ChassisState:
    X: float = 0.0
    Y: float = 0.0
    theta: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    omega_r: float = 0.0
    d: float = 1.2

    def __post_init__(self):
        object.__setattr__(self, "theta", _wrap(float(self.theta)))


@dataclass(frozen=True)
class WheelState:
    omega_w: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "omega_w", tuple(float(v) for v in np.broadcast_to(self.omega_w, (4,))))

    @classmethod
    def rolling(cls, v_x: float, params: RobotParams) -> "WheelState":
        return cls((v_x / params.r,) * 4)


@dataclass(frozen=True)
class TireState:
    F_z: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    s_res: np.ndarray
    F_x: np.ndarray
    F_y: np.ndarray


@dataclass(frozen=True)
class ControlInput:
    u: np.ndarray

    def torques(self, params: RobotParams) -> np.ndarray:
        return np.asarray(params.k_motor) * np.asarray(self.u, dtype=float)


def to_vector(chassis: ChassisState, wheels: WheelState) -> np.ndarray:
    return np.array([chassis.X, chassis.Y, chassis.theta, chassis.v_x, chassis.v_y,
                     chassis.omega_r, *wheels.omega_w], dtype=float)


def from_vector(x: np.ndarray, d: float) -> tuple[ChassisState, WheelState]:
    return (ChassisState(*(float(v) for v in x[:6]), d=float(d)),
            WheelState(tuple(float(v) for v in x[IWHEEL:IWHEEL + 4])))


def wrap_angle(a):
    """Wrap to (-pi, pi]; works elementwise on arrays."""
    if np.ndim(a) == 0:
        return _wrap(float(a))
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, TWO_PI) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _mode(mode, table):
    try:
        return table[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {sorted(table)}") from None


# ---------------------------------------------------------------------------
# public operations


def geometry_delta(params: RobotParams, d_current: float) -> float:
    """Angle between the body diagonal and the lateral axis, arctan(l/d)."""
    if params.l <= 0 or d_current <= 0:
        raise ModelDomainError("wheelbase and track width must be positive")
    return math.atan(params.l / d_current)


def ackermann_angles(K: float, C_d: int, params: RobotParams, d_current: float) -> np.ndarray:
    """Four wheel steering angles placing all wheel normals through one ICR.

    ``K`` is the curvature magnitude, ``C_d`` the turn side (+1 left, -1 right).
    Front and rear wheels on a side steer symmetrically, so the ICR lies on
    the lateral axis through the centre of gravity.
    """
    if C_d not in (-1, 0, 1):
        raise ModelDomainError(f"C_d must be -1, 0 or 1, got {C_d}")
    if K < 0:
        raise ModelDomainError("K is a curvature magnitude and must be >= 0")
    if abs(K) * d_current * abs(C_d) >= 2.0:
        raise ModelDomainError(
            f"turn radius {1.0 / K:.3f} m infeasible for track width {d_current:.3f} m")
    out = np.empty(4)
    _ackermann(float(K), float(C_d), params.l, float(d_current), out)
    return out


def sideslip_angles(state: ChassisState, steer, params: RobotParams) -> np.ndarray:
    out = np.empty(4)
    _sideslip(state.v_x, state.v_y, state.omega_r, np.asarray(steer, dtype=float),
              params.l, state.d, out)
    return out


def slip_ratio(omega_w: float, v_x: float, r: float) -> float:
    return _slip(float(omega_w), float(v_x), float(r))


def combined_slip(lam: float, alpha: float) -> float:
    if not abs(alpha) < math.pi / 2:
        raise ModelDomainError(f"|alpha| must be < pi/2, got {alpha}")
    return math.sqrt(lam * lam + math.tan(alpha) ** 2)


def tire_forces(F_z: float, lam: float, alpha: float, params: RobotParams,
                mode: str = "standard") -> tuple[float, float, float]:
    """Burckhardt resultant force and its split, returns ``(F_t, F_x, F_y)``."""
    if F_z < 0:
        raise ModelDomainError(f"vertical load must be >= 0, got {F_z}")
    combined_slip(lam, alpha)  # domain check
    return _tire(float(F_z), float(lam), float(alpha), params.c1, params.c2, params.c3,
                 _mode(mode, TIRE_MODES))


def wheel_derivative(u_i: float, omega_w: float, F_x: float, params: RobotParams,
                     wheel: int = 0) -> float:
    return _wheel_accel(float(u_i), float(omega_w), float(F_x), params.k_motor[wheel],
                        params.t_coulomb, params.b_visc, params.r, params.J_w)


def compute_tires(chassis: ChassisState, wheels: WheelState, steer, params: RobotParams,
                  mode: str = "standard") -> TireState:
    x = to_vector(chassis, wheels)
    lam, alpha, Fx, Fy = (np.empty(4) for _ in range(4))
    _tire_state(x, np.asarray(steer, dtype=float), chassis.d, params.packed(),
                _mode(mode, TIRE_MODES), lam, alpha, Fx, Fy)
    s_res = np.sqrt(lam**2 + np.tan(alpha) ** 2)
    return TireState(np.full(4, params.wheel_load), lam, alpha, s_res, Fx, Fy)


def chassis_derivative(state: ChassisState, tires: TireState, steer, params: RobotParams,
                       mode: str = "physical") -> np.ndarray:
    """Time derivative of ``(v_x, v_y, omega_r)``."""
    out = np.empty(3)
    _chassis_accel(state.v_x, state.v_y, state.omega_r,
                   np.asarray(tires.F_x, dtype=float), np.asarray(tires.F_y, dtype=float),
                   np.asarray(steer, dtype=float), params.m, params.I, params.l, state.d,
                   _mode(mode, CHASSIS_MODES), out)
    return out


def plant_step(chassis: ChassisState, wheels: WheelState, u, steer, dt: float,
               params: RobotParams, chassis_mode: str = "physical",
               tire_mode: str = "standard", d_next: float | None = None
               ) -> tuple[ChassisState, WheelState]:
    """One classical RK4 step of the coupled chassis/wheel/tire ODE.

    Input, steering and track width are held over the step. The returned
    chassis carries ``d_next`` when given (the polygon command for the next
    step), otherwise the current width.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = to_vector(chassis, wheels)
    out = step_vector(x, np.asarray(u, dtype=float), np.asarray(steer, dtype=float),
                      chassis.d, dt, params.packed(), _mode(chassis_mode, CHASSIS_MODES),
                      _mode(tire_mode, TIRE_MODES))
    return from_vector(out, chassis.d if d_next is None else d_next)


def step_vector(x: np.ndarray, u: np.ndarray, steer: np.ndarray, d: float, dt: float,
                packed: np.ndarray, cmode: int = PHYSICAL, tmode: int = STANDARD) -> np.ndarray:
    out = np.empty_like(x)
    _rk4(x, u, steer, float(d), float(dt), packed, cmode, tmode, out)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(
            f"non-finite state after step: x={x.tolist()} u={u.tolist()} steer={steer.tolist()} d={d}")
    return out
