import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatplan.collision import (build_ego_kernel, build_non_drivable, collision_density, density_for_plan,
                                kernel_size, window_mask)
from heatplan.geometry import GridFrame, Trajectory
from heatplan.raster import SpatialTemporalGrid

from oracles import brute_force_density, footprint_coverage

FRAME = GridFrame(0.0, 0.0, 0.5, 32, 32)


def _occ(values, frame=FRAME):
    return SpatialTemporalGrid(frame, np.asarray(values, dtype=float))


def test_kernel_heading_zero_exact_weights():
    k = build_ego_kernel(0.0, (4.0, 2.0), 0.5)
    assert k.size == 9
    w = k.weights
    # 4 m x 2 m over 0.5 m pixels: 7 x 3 full pixels, half pixels on the edges, quarters in the corners
    np.testing.assert_allclose(w[3:6, 1:8], 1 / 32, atol=1e-15)
    np.testing.assert_allclose(w[[2, 6], 1:8], 1 / 64, atol=1e-15)
    np.testing.assert_allclose(w[3:6][:, [0, 8]], 1 / 64, atol=1e-15)
    np.testing.assert_allclose(w[[2, 2, 6, 6], [0, 8, 0, 8]], 1 / 128, atol=1e-15)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(w) == 9 * 5


def test_kernel_quarter_turn_transposes():
    a = build_ego_kernel(0.0).weights
    b = build_ego_kernel(math.pi / 2).weights
    np.testing.assert_allclose(b, a.T, atol=1e-12)


@given(st.floats(-math.pi, math.pi), st.floats(1.0, 6.0), st.floats(0.5, 3.0), st.sampled_from([0.25, 0.5, 1.0]))
def test_kernel_matches_shapely_coverage(h, length, width, res):
    k = build_ego_kernel(h, (length, width), res)
    assert k.weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(k.weights, footprint_coverage(h, length, width, res, k.size), atol=1e-12)


def test_kernel_size_covers_diagonal():
    assert kernel_size(4.0, 2.0, 0.5) * 0.5 >= math.hypot(4, 2)
    assert kernel_size(4.0, 2.0, 0.5) % 2 == 1


def test_non_drivable_trivial_cases():
    zeros = _occ(np.zeros((2, 32, 32)))
    assert not build_non_drivable(zeros, [], None, FRAME).values.any()
    road = [np.array([[0, 0], [8, 0], [8, 8], [0, 8]], dtype=float)]
    agents = _occ(np.zeros((2, 32, 32)))
    nd = build_non_drivable(agents, [], road, FRAME)
    assert np.all(nd.values[:, 30, 30] == 1.0)
    assert np.all(nd.values[:, 2, 2] == 0.0)


@given(st.integers(0, 2 ** 32))
def test_non_drivable_is_or(seed):
    rng = np.random.default_rng(seed)
    a, s, d = (rng.integers(0, 2, (32, 32)) for _ in range(3))
    nd = build_non_drivable(_occ(a[None]), s, d, FRAME)
    expect = np.logical_or(np.logical_or(a == 1, s == 1), d == 0)
    assert np.array_equal(nd.values[0] == 1.0, expect)
    assert set(np.unique(nd.values)) <= {0.0, 1.0}


def test_non_drivable_frame_mismatch():
    other = GridFrame(1.0, 0.0, 0.5, 32, 32)
    with pytest.raises(ValueError):
        build_non_drivable(_occ(np.zeros((1, 32, 32)), other), [], None, FRAME)
    with pytest.raises(ValueError):
        build_non_drivable(_occ(np.zeros((1, 32, 32))), np.full((32, 32), 0.5), None, FRAME)


def test_density_all_zero_all_one():
    ks = [build_ego_kernel(0.3)]
    d = collision_density(_occ(np.zeros((1, 32, 32))), ks).values[0]
    # off-grid cells read as occupied, so only pixels a kernel radius inside the border are zero
    assert not d[4:-4, 4:-4].any()
    np.testing.assert_allclose(d, brute_force_density(np.zeros((32, 32)), 0.3, 4.0, 2.0, 0.5, 9), atol=1e-12)
    np.testing.assert_allclose(collision_density(_occ(np.ones((1, 32, 32))), ks).values, 1.0, atol=1e-12)


def test_density_kernel_count_mismatch():
    with pytest.raises(ValueError):
        collision_density(_occ(np.zeros((2, 32, 32))), [build_ego_kernel(0.0)])


@given(st.integers(0, 2 ** 32), st.floats(-math.pi, math.pi))
def test_density_matches_brute_force(seed, h):
    rng = np.random.default_rng(seed)
    frame = GridFrame(0.0, 0.0, 0.5, 24, 20)
    plane = (rng.random((20, 24)) < 0.2).astype(float)
    got = collision_density(_occ(plane[None], frame), [build_ego_kernel(h)]).values[0]
    want = brute_force_density(plane, h, 4.0, 2.0, 0.5, 9)
    assert np.max(np.abs(got - want)) < 1e-9


@given(st.integers(0, 2 ** 32), st.floats(0, 1), st.floats(0, 1), st.floats(-math.pi, math.pi))
def test_density_linear(seed, a, b, h):
    if a + b > 1:
        a, b = a / (a + b), b / (a + b)
    rng = np.random.default_rng(seed)
    p1, p2 = rng.random((2, 1, 32, 32))
    ks = [build_ego_kernel(h)]
    lhs = collision_density(_occ(a * p1 + b * p2), ks).values
    # out-of-grid reads as 1 in each term; the mixture sees a + b there, so compare interiors
    d1 = collision_density(_occ(p1), ks).values
    d2 = collision_density(_occ(p2), ks).values
    inner = (slice(None), slice(4, -4), slice(4, -4))
    np.testing.assert_allclose(lhs[inner], (a * d1 + b * d2)[inner], atol=1e-9)


@given(st.integers(0, 2 ** 32), st.floats(-math.pi, math.pi))
def test_density_monotone(seed, h):
    rng = np.random.default_rng(seed)
    p = rng.random((1, 32, 32))
    q = np.minimum(p + rng.random((1, 32, 32)) * (rng.random((1, 32, 32)) < 0.1), 1.0)
    ks = [build_ego_kernel(h)]
    assert np.all(collision_density(_occ(q), ks).values >= collision_density(_occ(p), ks).values - 1e-12)


@given(st.integers(0, 2 ** 32), st.integers(2, 12))
def test_windowed_equals_full_inside(seed, window):
    rng = np.random.default_rng(seed)
    T = 3
    vals = (rng.random((T, 32, 32)) < 0.3).astype(float)
    centers = rng.uniform(-2.0, 18.0, (T, 2))
    ks = [build_ego_kernel(h) for h in rng.uniform(-3, 3, T)]
    full = collision_density(_occ(vals), ks).values
    win = collision_density(_occ(vals), ks, centers, window)
    m = window_mask(FRAME, centers, window)
    assert np.array_equal(win.values[m], full[m])
    assert np.all(win.values[~m] == 1.0)


def test_out_of_grid_is_occupied():
    d = collision_density(_occ(np.zeros((1, 32, 32))), [build_ego_kernel(0.0)]).values[0]
    assert d[16, 0] > 0 and d[16, 16] == 0


def test_density_for_plan_uses_plan_headings():
    frame = GridFrame(0.0, 0.0, 0.5, 64, 64)
    plan = Trajectory.from_arrays(0.5, np.linspace(5, 25, 16), np.full(16, 16.0), np.full(16, 0.7),
                                  np.full(16, 2.0))
    vals = (np.random.default_rng(0).random((16, 64, 64)) < 0.1).astype(float)
    d = density_for_plan(_occ(vals, frame), plan, window=None)
    want = brute_force_density(vals[5], 0.7, 4.0, 2.0, 0.5, 9)
    assert np.max(np.abs(d.values[5] - want)) < 1e-9


def test_benchmark_density_224():
    frame = GridFrame(0.0, 0.0, 0.5, 224, 224)
    vals = (np.random.default_rng(0).random((16, 224, 224)) < 0.05).astype(float)
    plan = Trajectory.from_arrays(0.5, np.linspace(20, 80, 16), np.full(16, 56.0), np.zeros(16), np.full(16, 8.0))
    t = time.perf_counter()
    d = density_for_plan(_occ(vals, frame), plan)
    elapsed = time.perf_counter() - t
    print(f"windowed density 16x224x224: {elapsed * 1e3:.1f} ms")
    assert d.values.shape == (16, 224, 224)
    assert elapsed < 1.0
