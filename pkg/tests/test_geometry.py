import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatplan.geometry import (GridFrame, Pose2, Trajectory, polygon_from_box, project_on_polyline,
                               trajectory_kinematics, wrap_angle)

finite = st.floats(-1e3, 1e3, allow_nan=False)
angles = st.floats(-10, 10, allow_nan=False)


@st.composite
def frames(draw):
    return GridFrame(draw(finite), draw(finite), draw(st.floats(0.05, 2.0)), draw(st.integers(1, 400)),
                     draw(st.integers(1, 400)), draw(angles))


def test_origin_maps_to_pixel_zero():
    f = GridFrame(3.0, -2.0, 0.5, 10, 10, 0.7)
    np.testing.assert_allclose(f.world_to_grid(f.origin), [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(f.grid_to_world([0, 0]), f.origin, atol=1e-12)


def test_one_pixel_step():
    f = GridFrame(0.0, 0.0, 0.5, 10, 10)
    np.testing.assert_allclose(f.world_to_grid([0.5, 0.0]), [1.0, 0.0], atol=1e-12)


def test_far_corner():
    th = 0.3
    f = GridFrame(1.0, 2.0, 0.5, 20, 10, th)
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    expect = f.origin + R @ np.array([19 * 0.5, 9 * 0.5])
    np.testing.assert_allclose(f.grid_to_world([19, 9]), expect, atol=1e-12)


@given(frames(), st.floats(-50, 450), st.floats(-50, 450))
def test_round_trip(frame, u, v):
    w = frame.grid_to_world([u, v])
    np.testing.assert_allclose(frame.world_to_grid(w), [u, v], atol=1e-9 / frame.resolution)
    np.testing.assert_allclose(frame.grid_to_world(frame.world_to_grid(w)), w, atol=1e-9)


@given(angles)
def test_wrap_idempotent(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == pytest.approx(w, abs=1e-15)


def test_wrap_pi_boundary():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def _straight(n=16, dt=0.5, v=8.0):
    t = np.arange(n) * dt
    return Trajectory.from_arrays(dt, v * t, np.zeros(n), np.zeros(n), np.full(n, v))


def test_straight_line_kinematics_zero():
    k = trajectory_kinematics(_straight())
    for q in (k.accel, k.jerk, k.curvature, k.curvature_rate, k.lateral_accel):
        np.testing.assert_allclose(q[2:-2], 0.0, atol=1e-9)


def test_circle_kinematics():
    R, v, dt, n = 20.0, 10.0, 0.02, 200
    phi = v * np.arange(n) * dt / R
    tr = Trajectory.from_arrays(dt, R * np.sin(phi), R * (1 - np.cos(phi)), phi, np.full(n, v))
    k = trajectory_kinematics(tr)
    inner = slice(3, -3)
    np.testing.assert_allclose(k.curvature[inner], 1 / R, rtol=0.02)
    np.testing.assert_allclose(k.lateral_accel[inner], v * v / R, rtol=0.02)


# Oracle: analytic derivatives of a generating polynomial (speed, tangential
# acceleration and its derivative, curvature, lateral acceleration).
PX = np.polynomial.Polynomial([0.0, 8.0, 0.3, -0.02])
PY = np.polynomial.Polynomial([0.0, 0.5, 0.15, 0.01])


def _analytic(t):
    x1, y1 = PX.deriv(1)(t), PY.deriv(1)(t)
    x2, y2 = PX.deriv(2)(t), PY.deriv(2)(t)
    x3, y3 = PX.deriv(3)(t), PY.deriv(3)(t)
    v = np.hypot(x1, y1)
    a = (x1 * x2 + y1 * y2) / v
    dv2 = x2 * x2 + y2 * y2 + x1 * x3 + y1 * y3
    jerk = (dv2 - a * a) / v
    kappa = (x1 * y2 - y1 * x2) / v ** 3
    return v, a, jerk, kappa, v * v * kappa


# hand-evaluated at t = 2 s: x' = 8.96, y' = 1.22, x'' = 0.36, y'' = 0.42
FROZEN_T2 = {"speed": 9.04268, "accel": 0.41337, "kappa": 0.0044954}


def test_polynomial_oracle_frozen_values():
    v, a, _, kappa, _ = _analytic(np.array([2.0]))
    assert v[0] == pytest.approx(FROZEN_T2["speed"], abs=1e-4)
    assert a[0] == pytest.approx(FROZEN_T2["accel"], abs=1e-4)
    assert kappa[0] == pytest.approx(FROZEN_T2["kappa"], abs=1e-6)


def test_polynomial_kinematics_match_symbolic():
    dt = 0.01
    t = np.arange(0, 4.0 + 1e-9, dt)
    x1, y1 = PX.deriv(1)(t), PY.deriv(1)(t)
    tr = Trajectory.from_arrays(dt, PX(t), PY(t), np.arctan2(y1, x1), np.hypot(x1, y1))
    k = trajectory_kinematics(tr)
    v, a, jerk, kappa, lat = _analytic(t)
    inner = slice(5, -5)
    for got, want in ((k.speed, v), (k.accel, a), (k.jerk, jerk), (k.curvature, kappa), (k.lateral_accel, lat)):
        err = np.abs(got[inner] - want[inner]) / np.maximum(np.abs(want[inner]), 1e-2)
        assert err.max() < 1e-3


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-math.pi, math.pi), st.integers(0, 10 ** 6))
def test_kinematics_rigid_invariance(tx, ty, rot, seed):
    rng = np.random.default_rng(seed)
    n, dt = 16, 0.5
    xy = np.cumsum(rng.uniform(2, 6, (n, 2)) * [1, 0.3], axis=0)
    tr = Trajectory.from_positions(dt, xy)
    c, s = math.cos(rot), math.sin(rot)
    xy2 = xy @ np.array([[c, s], [-s, c]]) + [tx, ty]
    tr2 = Trajectory.from_arrays(dt, xy2[:, 0], xy2[:, 1], tr.headings + rot, tr.speeds)
    k1, k2 = trajectory_kinematics(tr), trajectory_kinematics(tr2)
    for name in ("accel", "jerk", "curvature", "curvature_rate", "lateral_accel"):
        np.testing.assert_allclose(getattr(k1, name), getattr(k2, name), atol=1e-9)


def test_standstill_no_divide_by_zero():
    tr = Trajectory.from_arrays(0.5, np.zeros(8), np.zeros(8), np.linspace(0, 1, 8), np.zeros(8))
    with np.errstate(all="raise"):
        k = trajectory_kinematics(tr)
    assert np.all(np.isfinite(k.curvature))


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(0.5, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Trajectory(0.0, np.zeros((3, 4)))
    with pytest.raises(ValueError):
        Trajectory(0.5, [[0, 0, 0, float("nan")], [0, 0, 0, 0]])


def test_box_polygon_and_projection():
    poly = polygon_from_box(0, 0, 0, 4, 2)
    assert np.allclose(np.sort(poly[:, 0]), [-2, -2, 2, 2])
    s, lat, _ = project_on_polyline([[5.0, 1.0]], [[0, 0], [10, 0]])
    assert s[0] == pytest.approx(5.0) and lat[0] == pytest.approx(1.0)


def test_pose_compose_local_frame():
    p = Pose2(1.0, 1.0, math.pi / 2).compose(1.0, 0.0, 0.0)
    assert (p.x, p.y) == pytest.approx((1.0, 2.0))
