"""Parametric synthetic scenarios.

Every generator is a pure function of ``(kind, params, seed)``. ``params``
overrides the defaults in ``PARAMS[kind]``; each entry is
``(default, low, high)``. The ``jitter`` parameter scales seeded
perturbations of speeds and distances; ``jitter=0`` makes the seed irrelevant.

Expert trajectories use smooth sin^2 acceleration pulses, so they stay within
the solver's default hard bounds.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Optional

import numpy as np
import shapely

from .geometry import Pose2, Trajectory, interpolate_polyline, polygon_from_box, wrap_angle
from .scenario import AgentTrack, Baseline, MapData, Scenario, validate_scenario

EGO_LENGTH, EGO_WIDTH = 4.0, 2.0
DT, HORIZON = 0.5, 16
TRACK_DT = 0.1
HISTORY_S = 2.0

PARAMS: Dict[str, Dict[str, tuple]] = {
    "straight_lead_stop": {
        "ego_speed": (10.0, 2.0, 20.0),
        "lead_gap": (30.0, 8.0, 100.0),
        "lead_speed": (None, 0.0, 20.0),
        "lead_decel": (3.0, 0.5, 8.0),
        "lead_brake_time": (1.0, 0.0, 6.0),
        "stop_gap": (4.0, 2.5, 10.0),
        "speed_limit": (15.0, 5.0, 35.0),
        "duration": (8.0, 1.0, 30.0),
        "jitter": (0.1, 0.0, 0.3),
    },
    "crosswalk_pedestrians": {
        "ego_speed": (8.0, 3.0, 15.0),
        "crosswalk_distance": (35.0, 15.0, 80.0),
        "n_pedestrians": (3, 1, 8),
        "ped_speed": (1.3, 0.5, 2.5),
        "crossing_start": (0.0, -5.0, 5.0),
        "speed_limit": (15.0, 5.0, 35.0),
        "duration": (8.0, 1.0, 30.0),
        "jitter": (0.1, 0.0, 0.3),
    },
    "unprotected_turn": {
        "direction": ("right", None, None),
        "ego_speed": (6.0, 2.0, 10.0),
        "turn_radius": (12.0, 6.0, 25.0),
        "approach_distance": (25.0, 10.0, 60.0),
        "cross_speed": (8.0, 0.0, 15.0),
        "cross_offset": (0.0, -3.0, 3.0),
        "speed_limit": (13.0, 5.0, 35.0),
        "duration": (8.0, 1.0, 30.0),
        "jitter": (0.1, 0.0, 0.3),
    },
    "open_field_obstacle": {
        "ego_speed": (8.0, 3.0, 15.0),
        "obstacle_time": (3.0, 1.5, 6.0),
        "obstacle_length": (3.0, 1.0, 6.0),
        "obstacle_width": (2.4, 1.0, 4.0),
        "obstacle_lateral": (0.0, -0.5, 0.5),
        "speed_limit": (15.0, 5.0, 35.0),
        "duration": (8.0, 1.0, 30.0),
        "jitter": (0.1, 0.0, 0.3),
    },
}

KINDS = tuple(PARAMS)


class ParamError(ValueError):
    """Raised for an unknown or out-of-range generator parameter."""

    def __init__(self, name: str, message: str):
        super().__init__(f"parameter {name!r}: {message}")
        self.param = name


def resolve_params(kind: str, params: Optional[dict]) -> dict:
    if kind not in PARAMS:
        raise ParamError("kind", f"unknown scenario kind {kind!r}; expected one of {', '.join(KINDS)}")
    spec = PARAMS[kind]
    out = {k: v[0] for k, v in spec.items()}
    out["kind"] = kind
    for name, value in (params or {}).items():
        if name not in spec:
            raise ParamError(name, f"not a parameter of {kind}")
        default, lo, hi = spec[name]
        if isinstance(default, str):
            if not isinstance(value, str):
                raise ParamError(name, "expected a string")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParamError(name, f"expected a number, got {value!r}")
            if not lo <= value <= hi:
                raise ParamError(name, f"{value} outside [{lo}, {hi}]")
        out[name] = value
    return out


def generate_synthetic(kind: str, params: Optional[dict] = None, seed: int = 0) -> Scenario:
    p = resolve_params(kind, params)
    rng = np.random.default_rng(seed)
    s = _GENERATORS[kind](p, rng)
    s.name = f"{kind}-{seed}"
    validate_scenario(s)
    return s


# ---------------------------------------------------------------------------
# speed profiles made of sin^2 acceleration pulses


class SpeedProfile:
    """v(t) = v0 + sum of smooth speed changes ``dv`` over ``[t0, t0 + tau]``."""

    def __init__(self, v0: float):
        self.v0 = v0
        self.pulses = []

    def change(self, t0: float, tau: float, dv: float) -> "SpeedProfile":
        self.pulses.append((t0, tau, dv))
        return self

    def speed(self, t):
        t = np.asarray(t, dtype=float)
        v = np.full_like(t, self.v0)
        for t0, tau, dv in self.pulses:
            u = np.clip((t - t0) / tau, 0.0, 1.0)
            v = v + dv * (u - np.sin(2 * np.pi * u) / (2 * np.pi))
        return v

    def distance(self, t):
        t = np.asarray(t, dtype=float)
        s = self.v0 * t
        for t0, tau, dv in self.pulses:
            u = (t - t0) / tau
            inside = np.clip(u, 0.0, 1.0)
            g = inside ** 2 / 2 + (np.cos(2 * np.pi * inside) - 1) / (4 * np.pi ** 2)
            s = s + dv * tau * (g + np.maximum(u - 1.0, 0.0))
        return s

    def end_speed(self) -> float:
        return self.v0 + sum(p[2] for p in self.pulses)

    def peak_accel(self) -> float:
        return max([abs(2 * dv / tau) for _, tau, dv in self.pulses], default=0.0)


class Path:
    """Arc-length parametrised dense polyline."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        seg = np.diff(self.points, axis=0)
        self.cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
        seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
        # vertex headings average the adjacent segments for a continuous tangent
        mids = seg_heading[:-1] + 0.5 * wrap_angle(seg_heading[1:] - seg_heading[:-1])
        self.vertex_heading = np.unwrap(np.concatenate([[seg_heading[0]], mids, [seg_heading[-1]]]))

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def pose(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        pts, _ = interpolate_polyline(self.points, s)
        heading = np.interp(s, self.cum, self.vertex_heading)
        return pts, wrap_angle(heading)


def _line(p0, heading: float, length: float, step: float = 1.0) -> np.ndarray:
    n = max(int(math.ceil(length / step)), 1)
    s = np.linspace(0.0, length, n + 1)
    return np.asarray(p0, dtype=float) + s[:, None] * np.array([math.cos(heading), math.sin(heading)])


def _arc(center, radius: float, phi0: float, phi1: float, step: float = 0.1) -> np.ndarray:
    n = max(int(math.ceil(abs(phi1 - phi0) * radius / step)), 2)
    phi = np.linspace(phi0, phi1, n + 1)
    return np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(phi), np.sin(phi)])


def _rect(x0, x1, y0, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _n_expert(duration: float) -> int:
    return int(round((duration + (HORIZON - 1) * DT) / DT)) + 1


def _expert_from(path: Path, profile: SpeedProfile, n: int) -> Trajectory:
    t = np.arange(n) * DT
    pts, heading = path.pose(profile.distance(t))
    return Trajectory.from_arrays(DT, pts[:, 0], pts[:, 1], heading, profile.speed(t))


def _track_from(agent_id: str, kind: str, length: float, width: float, path: Path,
                profile: SpeedProfile, t_end: float, s_offset: float = 0.0) -> AgentTrack:
    t = np.round(np.arange(-HISTORY_S, t_end + 1e-9, TRACK_DT), 10)
    s = s_offset + profile.distance(t)
    pts, heading = path.pose(s)
    rows = np.column_stack([t, pts, heading, profile.speed(t)])
    return AgentTrack(agent_id, kind, length, width, rows[t <= 0], rows[t > 0])


def _min_clearance(expert: Trajectory, agents, statics=(), step: float = TRACK_DT,
                   t_end: Optional[float] = None) -> float:
    """Smallest footprint-to-footprint distance between the expert and any obstacle."""
    fine = expert.resample(0.0, int(round((t_end or expert.duration) / step)) + 1, step)
    best = math.inf
    static_geoms = [shapely.Polygon(p) for p in statics]
    for k, (x, y, h, _) in enumerate(fine.states):
        ego = shapely.Polygon(polygon_from_box(x, y, h, EGO_LENGTH, EGO_WIDTH))
        for a in agents:
            st = a.state_at(k * step)
            if st is not None:
                best = min(best, ego.distance(shapely.Polygon(a.footprint(st))))
        for g in static_geoms:
            best = min(best, ego.distance(g))
    return best


def _jit(p: dict, rng, name: str, scale: float = 1.0):
    """Multiplicative seeded jitter, clamped to the parameter's range."""
    u = rng.uniform(-1.0, 1.0)
    value = p[name] * (1.0 + p["jitter"] * scale * u)
    _, lo, hi = PARAMS[p["kind"]][name]
    return min(max(value, lo), hi)


def _straight_map(length_ahead: float, speed_limit: float, shoulder: float = 2.0) -> MapData:
    lanes = {
        "lane0": Baseline("lane0", _line((-60.0, 0.0), 0.0, length_ahead + 60.0, 10.0), speed_limit),
        "lane1": Baseline("lane1", _line((-60.0, 3.5), 0.0, length_ahead + 60.0, 10.0), speed_limit),
    }
    drivable = [_rect(-60.0, length_ahead, -1.75 - shoulder, 5.25 + shoulder)]
    return MapData(drivable, lanes, ["lane0"], [])


# ---------------------------------------------------------------------------
# generators


def _straight_lead_stop(p: dict, rng) -> Scenario:
    v0 = _jit(p, rng, "ego_speed")
    gap = _jit(p, rng, "lead_gap")
    v_lead = v0 if p["lead_speed"] is None else p["lead_speed"]
    decel, t_lb = p["lead_decel"], p["lead_brake_time"]
    if v0 > p["speed_limit"]:
        raise ParamError("ego_speed", f"{v0:.2f} exceeds speed_limit {p['speed_limit']}")
    n = _n_expert(p["duration"])
    t_end = (n - 1) * DT + 0.5
    road = _line((-60.0, 0.0), 0.0, v0 * t_end + gap + 160.0, 1.0)
    path = Path(road)

    lead_len = 4.5
    lead_s0 = 60.0 + EGO_LENGTH / 2 + gap + lead_len / 2  # arc length along the road polyline
    t_stop = t_lb + v_lead / decel
    lead_track = _lead_track(path, lead_s0, v_lead, decel, t_lb, t_end, lead_len)
    if t_stop > t_end:
        raise ParamError("lead_decel", "lead does not stop within the scenario span")
    lead_final_rear = lead_s0 + v_lead * t_lb + v_lead ** 2 / (2 * decel) - lead_len / 2 - 60.0

    # the expert starts braking half a second after the lead (earlier if that would need
    # more than 2.9 m/s^2; a sin^2 stop over distance d peaks at v0^2 / d) and stops
    # stop_gap behind it
    avail = lead_final_rear - p["stop_gap"] - EGO_LENGTH / 2
    t_b = max(min(t_lb + 0.5, (avail - v0 * v0 / 2.9) / v0), 0.0)
    brake_dist = avail - v0 * t_b
    if brake_dist <= 0:
        raise ParamError("lead_gap", "too small to stop behind the lead")
    tau = 2 * brake_dist / v0
    profile = SpeedProfile(v0).change(t_b, tau, -v0)
    if profile.peak_accel() > 3.0:
        raise ParamError("lead_gap", f"stopping needs {profile.peak_accel():.2f} m/s^2 (> 3)")
    expert = _expert_from(_shifted(path, 60.0), profile, n)

    m = _straight_map(v0 * t_end + gap + 100.0, p["speed_limit"])
    s = Scenario(m, [lead_track], Pose2(0.0, 0.0, 0.0), v0, expert, DT, HORIZON)
    if _min_clearance(expert, [lead_track]) < 2.0:
        raise ParamError("lead_decel", "expert cannot keep 2 m to the lead")
    return s


def _shifted(path: Path, s0: float) -> Path:
    """Path whose arc length 0 sits at ``s0`` of ``path``."""
    pts, _ = path.pose(np.array([s0]))
    keep = path.cum > s0
    return Path(np.vstack([pts, path.points[keep]]))


def _lead_track(path: Path, s0: float, v: float, decel: float, t_brake: float, t_end: float,
                length: float) -> AgentTrack:
    t = np.round(np.arange(-HISTORY_S, t_end + 1e-9, TRACK_DT), 10)
    tb = np.maximum(t - t_brake, 0.0)
    t_stop = v / decel if decel > 0 else math.inf
    tb_c = np.minimum(tb, t_stop)
    s = s0 + v * np.minimum(t, t_brake) + v * tb_c - 0.5 * decel * tb_c ** 2
    speed = np.where(tb > 0, np.maximum(v - decel * tb, 0.0), v)
    pts, heading = path.pose(s)
    rows = np.column_stack([t, pts, heading, speed])
    return AgentTrack("lead", "vehicle", length, 2.0, rows[t <= 0], rows[t > 0])


def _crosswalk_pedestrians(p: dict, rng) -> Scenario:
    v0 = _jit(p, rng, "ego_speed")
    x_c = _jit(p, rng, "crosswalk_distance") + EGO_LENGTH / 2  # crosswalk center x
    if v0 > p["speed_limit"]:
        raise ParamError("ego_speed", f"{v0:.2f} exceeds speed_limit {p['speed_limit']}")
    n = _n_expert(p["duration"])
    t_end = (n - 1) * DT + 0.5
    v_ped = p["ped_speed"]
    y_start, y_stop = -6.0, 12.0
    ped_size = 0.6
    corridor = EGO_WIDTH / 2 + ped_size / 2 + 1.0

    agents = []
    windows = []
    for i in range(int(p["n_pedestrians"])):
        t_i = p["crossing_start"] + 1.5 * i + 0.3 * p["jitter"] * rng.uniform(-1, 1)
        x_i = x_c + rng.uniform(-1.0, 1.0) * min(1.0, 10 * p["jitter"])
        walk = SpeedProfile(0.0).change(t_i, 0.4, v_ped)
        walk_len = y_stop - y_start
        line = Path(_line((x_i, y_start), math.pi / 2, walk_len + 40.0, 0.5))
        track = _track_from(f"ped{i}", "pedestrian", ped_size, ped_size, line, walk, t_end)
        # freeze on the far sidewalk
        for arr in (track.history, track.future):
            over = arr[:, 2] > y_stop
            arr[over, 2] = y_stop
            arr[over, 4] = 0.0
        agents.append(track)
        enter = t_i + 0.2 + (-corridor - y_start) / v_ped
        leave = t_i + 0.2 + (corridor - y_start) / v_ped
        windows.append((enter, leave))

    road = Path(_line((0.0, 0.0), 0.0, v0 * t_end + x_c + 200.0, 1.0))
    t_enter = min(w[0] for w in windows)
    t_leave = max(w[1] for w in windows)
    front_reach = (x_c - 1.5 - EGO_LENGTH / 2) / v0
    rear_clear = (x_c + 1.5 + EGO_LENGTH / 2) / v0
    profile = SpeedProfile(v0)
    if rear_clear + 1.0 > t_enter and front_reach - 1.0 < t_leave:
        stop_front = x_c - 3.5
        brake_dist = stop_front - EGO_LENGTH / 2
        tau = 2 * brake_dist / v0
        if 2 * v0 / tau > 3.0:
            raise ParamError("crosswalk_distance", "too close to stop comfortably")
        t_go = max(tau, t_leave + 0.5)
        profile.change(0.0, tau, -v0).change(t_go, max(v0, 2.0), v0)
    expert = _expert_from(road, profile, n)
    m = _straight_map(v0 * t_end + x_c + 100.0, p["speed_limit"])
    if _min_clearance(expert, agents) < 0.5:
        raise ParamError("crossing_start", "expert cannot keep clear of the pedestrians")
    return Scenario(m, agents, Pose2(0.0, 0.0, 0.0), v0, expert, DT, HORIZON)


def _unprotected_turn(p: dict, rng) -> Scenario:
    direction = p["direction"]
    if direction not in ("right", "left"):
        raise ParamError("direction", f"expected 'right' or 'left', got {direction!r}")
    if p["ego_speed"] ** 2 / p["turn_radius"] > 3.5:
        raise ParamError("ego_speed", f"lateral acceleration {p['ego_speed'] ** 2 / p['turn_radius']:.2f}"
                                      " m/s^2 on the turn exceeds 3.5")
    R = _jit(p, rng, "turn_radius")
    v0 = min(_jit(p, rng, "ego_speed"), math.sqrt(3.5 * R))
    A = _jit(p, rng, "approach_distance")
    if v0 > p["speed_limit"]:
        raise ParamError("ego_speed", f"{v0:.2f} exceeds speed_limit {p['speed_limit']}")
    n = _n_expert(p["duration"])
    t_end = (n - 1) * DT + 0.5
    limit = p["speed_limit"]

    approach = _line((-A - 60.0, 0.0), 0.0, A + 60.0, 1.0)
    turn = _arc((0.0, -R), R, math.pi / 2, 0.0)
    exit_len = 250.0
    exit_ = _line((R, -R), -math.pi / 2, exit_len, 1.0)
    ego_path = _shifted(Path(np.vstack([approach, turn[1:], exit_[1:]])), 60.0)

    baselines = {
        "approach": Baseline("approach", approach, limit),
        "turn": Baseline("turn", turn, limit),
        "exit": Baseline("exit", exit_, limit),
        "cross_sb": Baseline("cross_sb", _line((R, 120.0), -math.pi / 2, 120.0 + R, 1.0), limit),
        "cross_nb": Baseline("cross_nb", _line((R + 3.5, -R - exit_len), math.pi / 2, exit_len + R + 120.0, 1.0), limit),
        "ew_wb": Baseline("ew_wb", _line((R + 10.0, 3.5), math.pi, R + 10.0 + A + 60.0, 1.0), limit),
    }
    drivable = [
        _rect(-A - 60.0, R + 7.25, -3.75, 7.25),
        _rect(R - 3.75, R + 7.25, -R - exit_len, 120.0),
        _rect(-3.75, R + 3.75, -R - 3.75, 3.75),
    ]
    m = MapData(drivable, baselines, ["approach", "turn", "exit"], [])

    agents = []
    if p["cross_speed"] > 0:
        vc = p["cross_speed"]
        t_nominal = (A + math.pi * R / 2) / v0
        t_merge = t_nominal + p["cross_offset"] + 0.5 * p["jitter"] * rng.uniform(-1, 1)
        cross_path = Path(_line((R, 120.0), -math.pi / 2, 400.0, 1.0))
        s_merge = 120.0 + R
        track = _track_from("cross", "vehicle", 4.5, 2.0, cross_path, SpeedProfile(vc), t_end,
                            s_offset=s_merge - vc * t_merge)
        agents.append(track)

    expert = None
    # slow down and wait as little as possible
    for v_low in (v0, 0.75 * v0, 0.5 * v0, 0.25 * v0, 0.0):
        for hold in np.arange(0.0, 12.01, 0.5):
            profile = SpeedProfile(v0)
            if v_low < v0:
                tau_d = max(2.0, (v0 - v_low))
                tau_a = max(2.0, (v0 - v_low))
                profile.change(0.0, tau_d, v_low - v0).change(tau_d + hold, tau_a, v0 - v_low)
            elif hold > 0:
                continue
            candidate = _expert_from(ego_path, profile, n)
            if not agents or _min_clearance(candidate, agents) >= 1.5:
                expert = candidate
                break
        if expert is not None:
            break
    if expert is None:
        raise ParamError("cross_offset", "no comfortable yielding profile found")

    s = Scenario(m, agents, Pose2(-A, 0.0, 0.0), v0, expert, DT, HORIZON)
    return _mirror(s) if direction == "left" else s


def _mirror(s: Scenario) -> Scenario:
    """Reflect a scenario across the x axis (right turn -> left turn)."""
    flip = np.array([1.0, -1.0])

    def poly(pts):
        return (np.asarray(pts) * flip)[::-1].copy()

    def track(arr):
        out = arr.copy()
        out[:, 2] *= -1
        out[:, 3] = wrap_angle(-out[:, 3])
        return out

    m = MapData([poly(p) for p in s.map.drivable_area],
                {k: Baseline(b.id, b.points * flip, b.speed_limit, b.lane_width)
                 for k, b in s.map.baselines.items()},
                list(s.map.route), [poly(p) for p in s.map.static_objects])
    agents = [AgentTrack(a.id, a.kind, a.length, a.width, track(a.history), track(a.future))
              for a in s.agents]
    st = s.expert_future.states.copy()
    st[:, 1] *= -1
    st[:, 2] *= -1
    expert = Trajectory(s.expert_future.dt, st)
    pose = Pose2(s.ego_pose.x, -s.ego_pose.y, -s.ego_pose.heading)
    return Scenario(m, agents, pose, s.ego_speed, expert, s.dt, s.horizon, s.name)


def _open_field_obstacle(p: dict, rng) -> Scenario:
    v0 = _jit(p, rng, "ego_speed")
    if v0 > p["speed_limit"]:
        raise ParamError("ego_speed", f"{v0:.2f} exceeds speed_limit {p['speed_limit']}")
    lateral = float(np.clip(p["obstacle_lateral"] + 3.0 * p["jitter"] * rng.uniform(-1, 1), -0.8, 0.8))
    n = _n_expert(p["duration"])
    t_end = (n - 1) * DT
    length_ahead = v0 * t_end + 80.0
    road = Path(_line((0.0, 0.0), 0.0, length_ahead, 1.0))
    expert = _expert_from(road, SpeedProfile(v0), n)
    x_obs = v0 * p["obstacle_time"]
    obstacle = polygon_from_box(x_obs, lateral, 0.0, p["obstacle_length"], p["obstacle_width"])
    m = MapData(
        [_rect(-60.0, length_ahead, -60.0, 60.0)],
        {"lane0": Baseline("lane0", _line((-60.0, 0.0), 0.0, length_ahead + 60.0, 10.0), p["speed_limit"])},
        ["lane0"],
        [obstacle],
    )
    return Scenario(m, [], Pose2(0.0, 0.0, 0.0), v0, expert, DT, HORIZON)


_GENERATORS: Dict[str, Callable] = {
    "straight_lead_stop": _straight_lead_stop,
    "crosswalk_pedestrians": _crosswalk_pedestrians,
    "unprotected_turn": _unprotected_turn,
    "open_field_obstacle": _open_field_obstacle,
}


def synthetic_suite(n_per_kind: int = 5, seed0: int = 0) -> list:
    """The default evaluation suite: ``n_per_kind`` seeds of every kind."""
    out = []
    for kind in KINDS:
        for i in range(n_per_kind):
            params = {"direction": "left"} if kind == "unprotected_turn" and i % 2 else None
            out.append(generate_synthetic(kind, params, seed0 + i))
    return out
