import math

import numpy as np
import pytest
import shapely
from hypothesis import given
from hypothesis import strategies as st

from heatplan.geometry import GridFrame, Pose2, Trajectory, polygon_from_box
from heatplan.raster import (CHANNELS, MAGIC, SpatialTemporalGrid, bilinear, default_frames, grid_from_bytes,
                             grid_to_bytes, rasterize, read_grid, render_heatmap_target,
                             render_occupancy_target, write_grid)
from heatplan.scenario import AgentTrack, MapData, Scenario, scenario_from_dict, scenario_to_dict
from heatplan.synthetic import generate_synthetic


def _empty_scenario(speed=5.0):
    expert = Trajectory.from_arrays(0.5, np.arange(16) * 2.5, np.zeros(16), np.zeros(16), np.full(16, speed))
    return Scenario(MapData(), [], Pose2(0.0, 0.0, 0.0), speed, expert, 0.5, 16)


def _vehicle(x, y, h, v=0.0, aid="a"):
    hist = [[0.0, x, y, h, v]]
    fut = [[k * 0.5, x + v * k * 0.5 * math.cos(h), y + v * k * 0.5 * math.sin(h), h, v] for k in range(1, 17)]
    return AgentTrack(aid, "vehicle", 4.0, 2.0, hist, fut)


def test_empty_scenario_channels():
    frame = GridFrame.ego_centric(Pose2(0, 0, 0))
    r = rasterize(_empty_scenario(), frame)
    assert tuple(r.channels) == CHANNELS
    assert r.channels["ego"].sum() > 0
    for c in ("roadmap", "baseline", "agents", "route"):
        assert not r.channels[c].any()
    assert np.all(r.channels["speed"] == pytest.approx(5.0 / 20.0))


def test_agent_pixel_is_one():
    s = _empty_scenario()
    s.agents.append(_vehicle(20.0, 3.0, 0.4))
    frame = GridFrame.ego_centric(Pose2(0, 0, 0))
    r = rasterize(s, frame)
    u, v = np.rint(frame.world_to_grid([20.0, 3.0])).astype(int)
    assert r.channels["agents"][v, u] == 1.0


def test_input_size_224():
    frame = GridFrame.ego_centric(Pose2(0, 0, 0), 224, 224, 0.5)
    r = rasterize(_empty_scenario(), frame)
    assert r.as_array().shape == (6, 224, 224)
    assert frame.width * frame.resolution == pytest.approx(112.0)


def test_heatmap_peak_and_sigma():
    frame = GridFrame(0.0, 0.0, 0.25, 80, 80)
    expert = Trajectory.from_arrays(0.5, [5.0, 6.0], [5.0, 5.0], [0, 0], [2, 2])
    g = render_heatmap_target(expert, frame, sigma_px=4.0)
    u, v = np.rint(frame.world_to_grid([5.0, 5.0])).astype(int)
    assert g.values[0, v, u] == 1.0
    assert g.values[0, v, u + 4] == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_heatmap_monotone_in_distance():
    frame = GridFrame(0.0, 0.0, 0.25, 60, 50)
    expert = Trajectory.from_arrays(0.5, [7.3, 8.0], [5.1, 5.0], [0, 0], [2, 2])
    g = render_heatmap_target(expert, frame)
    pu, pv = np.rint(frame.world_to_grid([7.3, 5.1])).astype(int)
    vv, uu = np.mgrid[0:50, 0:60]
    d = np.hypot(uu - pu, vv - pv).ravel()
    vals = g.values[0].ravel()
    order = np.argsort(d, kind="stable")
    d, vals = d[order], vals[order]
    # any pixel strictly farther away must not be larger
    for i in range(0, len(d), 37):
        assert np.all(vals[d > d[i] + 1e-12] <= vals[i] + 1e-15)
    assert np.sum(g.values[0] == g.values[0].max()) == 1


def test_heatmap_clipped_steps_reported():
    frame = GridFrame(0.0, 0.0, 0.25, 20, 20)
    expert = Trajectory.from_arrays(0.5, [1.0, 100.0], [1.0, 1.0], [0, 0], [2, 2])
    g = render_heatmap_target(expert, frame)
    assert g.empty_steps == (1,)


def test_occupancy_empty_and_union():
    frame = GridFrame(0.0, 0.0, 0.5, 40, 40)
    assert not render_occupancy_target([], frame, 4, 0.5).values.any()
    g = render_occupancy_target([_vehicle(10, 10, 0.0), _vehicle(11, 10.5, 0.3, aid="b")], frame, 4, 0.5)
    assert g.values.max() == 1.0


@given(st.floats(5.0, 15.0), st.floats(5.0, 15.0), st.floats(-math.pi, math.pi))
def test_occupancy_pixel_count(x, y, h):
    frame = GridFrame(0.0, 0.0, 0.5, 40, 40)
    g = render_occupancy_target([_vehicle(x, y, h)], frame, 2, 0.5)
    # oracle: pixel centers inside the rectangle, boundary included
    rect = shapely.Polygon(polygon_from_box(x, y, h, 4.0, 2.0))
    centers = frame.pixel_centers().reshape(-1, 2)
    inside = shapely.intersects_xy(rect, centers[:, 0], centers[:, 1]).reshape(frame.shape)
    count = int(g.values[0].sum())
    # centers within float noise of an edge may go either way
    assert abs(count - int(inside.sum())) <= 2


@given(st.floats(5.0, 15.0), st.floats(5.0, 15.0))
def test_occupancy_count_within_one_row_col(x, y):
    frame = GridFrame(0.0, 0.0, 0.5, 40, 40)
    count = int(render_occupancy_target([_vehicle(x, y, 0.0)], frame, 1, 0.5).values[0].sum())
    # 8 x 4 pixels, each side may gain or lose one row/column at the boundary
    assert 7 * 3 <= count <= 9 * 5


def test_occupancy_at_rest_axis_aligned():
    frame = GridFrame(0.0, 0.0, 0.5, 40, 40)
    g = render_occupancy_target([_vehicle(10.1, 10.1, 0.0)], frame, 3, 0.5)
    for t in range(3):
        assert g.values[t].sum() == 32


@given(st.integers(-240, 240), st.integers(-240, 240))
def test_translation_equivariance(ix, iy):
    # multiples of 1/8 m keep every coordinate difference exact, so edges that sit
    # exactly on pixel centers stay there
    dx, dy = ix / 8.0, iy / 8.0
    s = generate_synthetic("straight_lead_stop", seed=1)
    d = scenario_to_dict(s)

    def shift(pts):
        return [[p[0] + dx, p[1] + dy] + list(p[2:]) for p in pts]

    d["map"]["drivable_area"] = [shift(p) for p in d["map"]["drivable_area"]]
    for b in d["map"]["baseline_paths"]:
        b["points"] = shift(b["points"])
    for a in d["agents"]:
        a["history"] = [[r[0], r[1] + dx, r[2] + dy, r[3], r[4]] for r in a["history"]]
        a["future"] = [[r[0], r[1] + dx, r[2] + dy, r[3], r[4]] for r in a["future"]]
    d["ego"]["x"] += dx
    d["ego"]["y"] += dy
    d["expert_future"]["states"] = shift(d["expert_future"]["states"])
    s2 = scenario_from_dict(d)
    f1 = GridFrame.ego_centric(s.ego_pose, 64, 64, 0.5)
    f2 = GridFrame(f1.origin_x + dx, f1.origin_y + dy, 0.5, 64, 64, f1.orientation)
    a1, a2 = rasterize(s, f1).as_array(), rasterize(s2, f2).as_array()
    assert np.array_equal(a1, a2)


def test_values_in_unit_interval():
    s = generate_synthetic("crosswalk_pedestrians", seed=2)
    coarse, fine = default_frames(s.ego_pose)
    arr = rasterize(s, coarse).as_array()
    assert arr.min() >= 0 and arr.max() <= 1
    with pytest.raises(ValueError):
        SpatialTemporalGrid(coarse, np.full((1,) + coarse.shape, 1.5))


def test_grid_binary_round_trip(tmp_path):
    frame = GridFrame(1.0, 2.0, 0.5, 7, 5, 0.3)
    vals = np.random.default_rng(0).random((3, 5, 7)).astype(np.float32).astype(float)
    g = SpatialTemporalGrid(frame, vals)
    data = grid_to_bytes(g)
    assert data[:8] == MAGIC
    write_grid(g, tmp_path / "g.bin")
    g2 = read_grid(tmp_path / "g.bin")
    assert g2.frame == frame and np.array_equal(g2.values, vals)
    with pytest.raises(ValueError):
        grid_from_bytes(data[:-4])


def test_bilinear_center_value():
    frame = GridFrame(0.0, 0.0, 1.0, 3, 3)
    plane = np.zeros((3, 3))
    plane[1, 1] = 1.0
    assert bilinear(plane, frame, [[1.0, 1.0]])[0] == pytest.approx(1.0)
    assert bilinear(plane, frame, [[1.5, 1.0]])[0] == pytest.approx(0.5)
