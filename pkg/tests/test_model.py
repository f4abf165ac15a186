import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from wheelleg import model
from wheelleg.model import (ChassisState, ModelDomainError, TireState, WheelState,
                            ackermann_angles, chassis_derivative, combined_slip,
                            geometry_delta, plant_step, sideslip_angles, slip_ratio,
                            tire_forces, wheel_derivative)
from wheelleg.params import RobotParams, load_params, params_from_dict

P = RobotParams()
finite = dict(allow_nan=False, allow_infinity=False)


def _tires(Fx, Fy):
    z = np.zeros(4)
    return TireState(np.full(4, P.wheel_load), z, z, z, np.asarray(Fx, float), np.asarray(Fy, float))


# --- params ---------------------------------------------------------------

def test_shipped_parameter_file_matches_defaults():
    assert load_params() == RobotParams()


def test_params_derived_inertia_and_validation():
    assert P.I == pytest.approx(278 * (1.2**2 + 1.2**2) / 12)
    assert P.d_max == pytest.approx(1.7)
    with pytest.raises(ValueError):
        RobotParams(r=0)
    with pytest.raises(ValueError):
        RobotParams(delta_max_stretch=-0.1)
    with pytest.raises(KeyError):
        params_from_dict({"mass": 1})
    assert P.replace(m=100.0).I == pytest.approx(100 * 2.88 / 12)


# --- geometry -------------------------------------------------------------

def test_geometry_delta():
    assert geometry_delta(P, 1.2) == pytest.approx(math.pi / 4, rel=1e-15)
    assert geometry_delta(P, 1e12) < 1e-11
    assert geometry_delta(P.replace(l=1.5), 1.0) == pytest.approx(0.98279372324732906799, rel=1e-15)
    with pytest.raises(ModelDomainError):
        geometry_delta(P, 0.0)


def test_ackermann_examples():
    assert np.all(ackermann_angles(0.0, 1, P, 1.2) == 0.0)
    a = ackermann_angles(0.5, 1, P, 1.2)
    assert a[0] == pytest.approx(0.40489178628508342331, rel=1e-14)
    assert a[2] == pytest.approx(0.22679884805388587364, rel=1e-14)
    assert a[1] == -a[0] and a[3] == -a[2]
    with pytest.raises(ModelDomainError):
        ackermann_angles(2.0, 1, P, 1.2)
    with pytest.raises(ModelDomainError):
        ackermann_angles(0.1, 2, P, 1.2)


def _icr_spread(steer, l, d):
    """Max distance of each wheel normal from their least-squares common point."""
    corners = np.array([[l / 2, d / 2], [-l / 2, d / 2], [l / 2, -d / 2], [-l / 2, -d / 2]])
    normals = np.column_stack([-np.sin(steer), np.cos(steer)])  # along the axle
    # line i: points c_i + t n_i; perpendicular direction p_i = (cos, sin)
    perp = np.column_stack([np.cos(steer), np.sin(steer)])
    rhs = np.sum(perp * corners, axis=1)
    pt, *_ = np.linalg.lstsq(perp, rhs, rcond=None)
    assert normals.shape == (4, 2)
    return float(np.max(np.abs(perp @ pt - rhs)))


@settings(max_examples=200, deadline=None)
@given(K=st.floats(1e-4, 1.0), C_d=st.sampled_from([-1, 1]), d=st.floats(1.2, 1.7))
def test_ackermann_normals_concurrent(K, C_d, d):
    steer = ackermann_angles(K, C_d, P, d)
    assert _icr_spread(steer, P.l, d) <= 1e-6
    assert abs(steer[0]) >= abs(steer[2]) if C_d == 1 else abs(steer[2]) >= abs(steer[0])
    assert steer[0] == -steer[1] and steer[2] == -steer[3]


# --- sideslip / slip / combined ------------------------------------------

def test_sideslip_examples():
    s0 = np.zeros(4)
    assert np.all(sideslip_angles(ChassisState(v_x=1.0), s0, P) == 0.0)
    assert np.allclose(sideslip_angles(ChassisState(v_x=2.0, v_y=0.1), s0, P), -0.05, rtol=1e-15)
    a = sideslip_angles(ChassisState(v_x=2.0, omega_r=0.2), s0, P)
    ref = [-0.24 / 3.76, 0.24 / 3.76, -0.24 / 4.24, 0.24 / 4.24]
    assert np.allclose(a, ref, rtol=1e-14, atol=0)


def test_sideslip_standstill_guard():
    steer = np.array([0.1, -0.1, 0.05, -0.05])
    assert np.array_equal(sideslip_angles(ChassisState(), steer, P), steer)


def test_slip_ratio_examples():
    assert slip_ratio(10.0, 1.0, 0.1) == 0.0
    assert slip_ratio(20.0, 1.0, 0.1) == pytest.approx(0.5, rel=1e-15)
    assert slip_ratio(0.0, 1.0, 0.1) == -1.0
    assert slip_ratio(0.0, 0.0, 0.1) == 0.0


@given(w=st.floats(-500, 500, **finite), v=st.floats(-50, 50, **finite))
def test_slip_ratio_bounded(w, v):
    lam = slip_ratio(w, v, 0.1)
    assert -1.0 <= lam <= 1.0


@given(v=st.floats(0.01, 30))
def test_slip_zero_at_rolling(v):
    assert slip_ratio(v / 0.125, v, 0.125) == 0.0


def test_combined_slip():
    assert combined_slip(0.0, 0.0) == 0.0
    assert combined_slip(0.3, 0.0) == pytest.approx(0.3, rel=1e-15)
    assert combined_slip(0.3, 0.1) == pytest.approx(0.31633375795588887612, rel=1e-14)
    with pytest.raises(ModelDomainError):
        combined_slip(0.1, math.pi / 2)


# --- tires ----------------------------------------------------------------

def test_tire_examples():
    assert tire_forces(681.6, 0.0, 0.0, P) == (0.0, 0.0, 0.0)
    Ft, Fx, Fy = tire_forces(681.6, 0.2, 0.0, P)
    assert Ft == pytest.approx(794.43479716167825677, rel=1e-13)
    assert Fx == Ft and Fy == 0.0
    Ft, Fx, Fy = tire_forces(681.6, 0.0, -0.05, P)
    assert Fx == 0.0 and Fy < 0
    with pytest.raises(ModelDomainError):
        tire_forces(-1.0, 0.1, 0.0, P)
    with pytest.raises(ValueError):
        tire_forces(1.0, 0.1, 0.0, P, mode="nope")


def test_tire_literal_mode():
    Ft, *_ = tire_forces(681.6, 0.2, 0.0, P, mode="literal")
    ref, *_ = oracles.tire(681.6, 0.2, 0.0, P.c1, P.c2, P.c3, literal=True)
    assert oracles.rel_err(Ft, ref) < 1e-12


@given(Fz=st.floats(0, 5000), lam=st.floats(-1, 1), alpha=st.floats(-1.4, 1.4))
def test_tire_pythagorean_split(Fz, lam, alpha):
    Ft, Fx, Fy = tire_forces(Fz, lam, alpha, P)
    if combined_slip(lam, alpha) > 1e-6:
        assert math.hypot(Fx, Fy) == pytest.approx(abs(Ft), rel=1e-12, abs=1e-9)


# --- chassis --------------------------------------------------------------

def test_chassis_examples():
    z = np.zeros(4)
    assert np.all(chassis_derivative(ChassisState(), _tires(z, z), z, P) == 0.0)
    d = chassis_derivative(ChassisState(v_x=1.0, omega_r=0.5), _tires(z, z), z, P)
    assert np.allclose(d, [0.0, -0.5, 0.0], atol=1e-15)
    d = chassis_derivative(ChassisState(v_x=1.0), _tires(np.full(4, 69.5), z), z, P)
    assert np.allclose(d, [1.0, 0.0, 0.0], atol=1e-15)


def test_chassis_literal_rows():
    steer = np.array([0.1, -0.1, 0.05, -0.05])
    Fx = np.array([10.0, 20.0, 30.0, 40.0])
    Fy = np.array([-5.0, 3.0, 2.0, 1.0])
    st_ = ChassisState(v_x=1.5, v_y=0.1, omega_r=0.2, d=1.4)
    got = chassis_derivative(st_, _tires(Fx, Fy), steer, P, mode="literal")
    dg = math.atan(P.l / st_.d)
    vx = np.sum(Fx * np.cos(steer) + Fy * np.sin(steer)) / P.m + st_.omega_r * st_.v_y
    vy = np.sum(Fx * np.sin(steer) + Fy * np.cos(steer)) / P.m - st_.omega_r * st_.v_x
    w = math.hypot(P.l, st_.d) / 2 * np.sum(Fx * np.cos(steer - dg) + Fy * np.sin(steer - dg)) / P.I
    assert np.allclose(got, [vx, vy, w], rtol=1e-13)


def test_chassis_physical_corner_moments():
    # a single lateral force at the front-left corner: moment = +l/2 * Fy
    z = np.zeros(4)
    Fy = np.array([100.0, 0, 0, 0])
    d = chassis_derivative(ChassisState(), _tires(z, Fy), z, P)
    assert d[2] == pytest.approx(P.l / 2 * 100.0 / P.I, rel=1e-14)
    # a longitudinal force on the right side yaws left (CCW)
    Fx = np.array([0, 0, 100.0, 0])
    d = chassis_derivative(ChassisState(), _tires(Fx, z), z, P)
    assert d[2] == pytest.approx(P.d0 / 2 * 100.0 / P.I, rel=1e-14)


@given(vy=st.floats(-1, 1), w=st.floats(-1, 1), s=st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4),
       fx=st.lists(st.floats(-500, 500), min_size=4, max_size=4),
       fy=st.lists(st.floats(-500, 500), min_size=4, max_size=4))
def test_chassis_mirror_symmetry(vy, w, s, fx, fy):
    s, fx, fy = np.array(s), np.array(fx), np.array(fy)
    # mirror about the body x axis: left and right wheels swap
    swap = [2, 3, 0, 1]
    a = chassis_derivative(ChassisState(v_x=1.0, v_y=vy, omega_r=w), _tires(fx, fy), s, P)
    b = chassis_derivative(ChassisState(v_x=1.0, v_y=-vy, omega_r=-w),
                           _tires(fx[swap], -fy[swap]), -s[swap], P)
    assert np.allclose(b, [a[0], -a[1], -a[2]], rtol=1e-12, atol=1e-12)


# --- wheel ----------------------------------------------------------------

def test_wheel_examples():
    p = P.replace(k_motor=(15.0,) * 4, t_coulomb=1.0, b_visc=0.0, J_w=0.5, r=0.1)
    assert wheel_derivative(2.0, 0.0, 300.0, p) == 0.0
    assert wheel_derivative(2.0, 3.0, 50.0, p) == pytest.approx(48.0, rel=1e-15)
    p0 = P.replace(t_coulomb=0.0, b_visc=0.0)
    assert wheel_derivative(0.0, 7.0, 0.0, p0) == 0.0


# --- plant ----------------------------------------------------------------

def test_plant_rest_is_equilibrium():
    p = P.replace(t_coulomb=0.0, b_visc=0.0)
    c, w = plant_step(ChassisState(), WheelState(), np.zeros(4), np.zeros(4), 0.01, p)
    assert c == ChassisState() and w == WheelState()


def test_plant_pure_rolling_advances_one_metre():
    p = P.replace(t_coulomb=0.0, b_visc=0.0)
    c, w = ChassisState(v_x=1.0), WheelState.rolling(1.0, p)
    for _ in range(100):
        c, w = plant_step(c, w, np.zeros(4), np.zeros(4), 0.01, p)
    assert c.X == pytest.approx(1.0, abs=1e-12)
    assert c.Y == 0.0 and c.theta == 0.0


def test_plant_deterministic_and_detects_divergence():
    c, w = ChassisState(v_x=1.0, omega_r=0.1), WheelState((9.0, 11.0, 10.0, 10.5))
    u = np.array([1.0, -2.0, 3.0, 0.5])
    steer = ackermann_angles(0.2, 1, P, 1.2)
    assert plant_step(c, w, u, steer, 0.005, P) == plant_step(c, w, u, steer, 0.005, P)
    with pytest.raises(model.IntegrationError):
        model.step_vector(np.array([0, 0, 0, np.nan, 0, 0, 0, 0, 0, 0.0]), np.zeros(4),
                          np.zeros(4), 1.2, 0.01, P.packed())


def test_plant_theta_wrapped():
    c = ChassisState(theta=math.pi - 1e-4, v_x=1.0, omega_r=1.0)
    c2, _ = plant_step(c, WheelState.rolling(1.0, P), np.zeros(4), np.zeros(4), 0.01, P)
    assert -math.pi < c2.theta <= math.pi and c2.theta < 0
