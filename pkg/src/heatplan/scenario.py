"""Scenario data model and the JSON scenario format.

Top-level keys of a scenario document::

    {
      "map": {
        "drivable_area": [[[x, y], ...], ...],
        "baseline_paths": [{"id": "b0", "points": [[x, y], ...],
                            "speed_limit": 15.0, "lane_width": 3.5}],
        "route": ["b0"],
        "static_objects": [[[x, y], ...], ...]
      },
      "agents": [{"id": "lead", "kind": "vehicle", "length": 4.5, "width": 2.0,
                  "history": [[t, x, y, heading, speed], ...],
                  "future": [[t, x, y, heading, speed], ...]}],
      "ego": {"x": 0.0, "y": 0.0, "heading": 0.0, "speed": 10.0},
      "expert_future": {"dt": 0.5, "states": [[x, y, heading, speed], ...]},
      "dt": 0.5,
      "horizon": 16,
      "name": "optional free text"
    }

Meters, seconds, radians and m/s throughout. History timestamps are <= 0 and
future timestamps > 0, both strictly increasing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import shapely

from .geometry import Pose2, Trajectory, polygon_from_box, wrap_angle

AGENT_KINDS = ("vehicle", "pedestrian", "cyclist", "static")


class ScenarioError(ValueError):
    pass


class ScenarioParseError(ScenarioError):
    """The document does not follow the schema. ``field`` names the offending key."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


class ScenarioValidationError(ScenarioError):
    pass


@dataclass(frozen=True)
class Baseline:
    id: str
    points: np.ndarray
    speed_limit: float
    lane_width: float = 3.5


@dataclass
class MapData:
    drivable_area: List[np.ndarray] = field(default_factory=list)
    baselines: Dict[str, Baseline] = field(default_factory=dict)
    route: List[str] = field(default_factory=list)
    static_objects: List[np.ndarray] = field(default_factory=list)

    def route_polyline(self) -> Optional[np.ndarray]:
        if not self.route:
            return None
        parts = [self.baselines[r].points for r in self.route]
        out = [parts[0]]
        for p in parts[1:]:
            # skip the shared vertex between consecutive baselines
            out.append(p[1:] if np.allclose(p[0], out[-1][-1]) else p)
        return np.concatenate(out)

    def drivable_union(self):
        if not self.drivable_area:
            return shapely.Polygon()
        return shapely.union_all([shapely.Polygon(p) for p in self.drivable_area])


@dataclass
class AgentTrack:
    id: str
    kind: str
    length: float
    width: float
    history: np.ndarray  # (N, 5): t, x, y, heading, speed with t <= 0
    future: np.ndarray  # (M, 5) with t > 0

    def __post_init__(self):
        self.history = _track_array(self.history)
        self.future = _track_array(self.future)

    @property
    def current(self) -> np.ndarray:
        return self.history[-1]

    def samples(self) -> np.ndarray:
        if len(self.future):
            return np.concatenate([self.history, self.future])
        return self.history

    def state_at(self, t: float) -> Optional[np.ndarray]:
        """Interpolated (x, y, heading, speed) at time ``t``; None outside the track."""
        s = self.samples()
        ts = s[:, 0]
        if t < ts[0] - 1e-9 or t > ts[-1] + 1e-9:
            return None
        k = int(np.searchsorted(ts, t, side="left"))
        if k < len(ts) and abs(ts[k] - t) <= 1e-9:
            return s[k, 1:].copy()
        if k > 0 and abs(ts[k - 1] - t) <= 1e-9:
            return s[k - 1, 1:].copy()
        a, b = s[k - 1], s[k]
        w = (t - a[0]) / (b[0] - a[0])
        out = a[1:] + w * (b[1:] - a[1:])
        out[2] = wrap_angle(a[3] + w * wrap_angle(b[3] - a[3]))
        return out

    def footprint(self, state) -> np.ndarray:
        return polygon_from_box(state[0], state[1], state[2], self.length, self.width)


def _track_array(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 5))
    return arr.reshape(-1, 5)


@dataclass
class Scenario:
    map: MapData
    agents: List[AgentTrack]
    ego_pose: Pose2
    ego_speed: float
    expert_future: Trajectory
    dt: float
    horizon: int
    name: str = ""

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)


# ---------------------------------------------------------------------------
# parsing


def _get(d: dict, key: str, path: str, kind=None):
    if not isinstance(d, dict):
        raise ScenarioParseError(path, "expected an object")
    if key not in d:
        raise ScenarioParseError(f"{path}.{key}" if path else key, "missing required field")
    value = d[key]
    if kind is not None and not isinstance(value, kind):
        raise ScenarioParseError(f"{path}.{key}" if path else key,
                                 f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(path, f"expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise ScenarioParseError(path, "non-finite number")
    return float(value)


def _points(value, path: str, width: int = 2) -> np.ndarray:
    if not isinstance(value, list):
        raise ScenarioParseError(path, "expected an array of points")
    rows = []
    for i, p in enumerate(value):
        if not isinstance(p, list) or len(p) != width:
            raise ScenarioParseError(f"{path}[{i}]", f"expected an array of {width} numbers")
        rows.append([_number(c, f"{path}[{i}]") for c in p])
    return np.array(rows, dtype=float).reshape(-1, width)


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioParseError("<root>", "expected an object")
    m = _get(doc, "map", "", dict)
    drivable = [_points(p, f"map.drivable_area[{i}]")
                for i, p in enumerate(_get(m, "drivable_area", "map", list))]
    baselines: Dict[str, Baseline] = {}
    for i, b in enumerate(_get(m, "baseline_paths", "map", list)):
        path = f"map.baseline_paths[{i}]"
        bid = _get(b, "id", path, str)
        pts = _points(_get(b, "points", path, list), f"{path}.points")
        limit = _number(_get(b, "speed_limit", path), f"{path}.speed_limit")
        lane_width = _number(b.get("lane_width", 3.5), f"{path}.lane_width")
        if bid in baselines:
            raise ScenarioValidationError(f"duplicate baseline id {bid!r}")
        baselines[bid] = Baseline(bid, pts, limit, lane_width)
    route = _get(m, "route", "map", list)
    for i, r in enumerate(route):
        if not isinstance(r, str):
            raise ScenarioParseError(f"map.route[{i}]", "expected a baseline id string")
    statics = [_points(p, f"map.static_objects[{i}]")
               for i, p in enumerate(m.get("static_objects", []))]

    agents = []
    for i, a in enumerate(_get(doc, "agents", "", list)):
        path = f"agents[{i}]"
        kind = _get(a, "kind", path, str)
        if kind not in AGENT_KINDS:
            raise ScenarioParseError(f"{path}.kind", f"unknown agent kind {kind!r}")
        agents.append(AgentTrack(
            id=str(_get(a, "id", path)),
            kind=kind,
            length=_number(_get(a, "length", path), f"{path}.length"),
            width=_number(_get(a, "width", path), f"{path}.width"),
            history=_points(_get(a, "history", path, list), f"{path}.history", 5),
            future=_points(a.get("future", []), f"{path}.future", 5),
        ))

    ego = _get(doc, "ego", "", dict)
    ego_pose = Pose2(_number(_get(ego, "x", "ego"), "ego.x"), _number(_get(ego, "y", "ego"), "ego.y"),
                     _number(_get(ego, "heading", "ego"), "ego.heading"))
    ego_speed = _number(_get(ego, "speed", "ego"), "ego.speed")

    ef = _get(doc, "expert_future", "", dict)
    ef_dt = _number(_get(ef, "dt", "expert_future"), "expert_future.dt")
    states = _points(_get(ef, "states", "expert_future", list), "expert_future.states", 4)
    try:
        expert = Trajectory(ef_dt, states)
    except ValueError as e:
        raise ScenarioValidationError(f"expert_future: {e}") from None

    dt = _number(_get(doc, "dt", ""), "dt")
    horizon = _get(doc, "horizon", "", int)
    if isinstance(horizon, bool):
        raise ScenarioParseError("horizon", "expected an integer")

    s = Scenario(MapData(drivable, baselines, list(route), statics), agents, ego_pose, ego_speed,
                 expert, dt, horizon, str(doc.get("name", "")))
    validate_scenario(s)
    return s


def validate_scenario(s: Scenario) -> None:
    for r in s.map.route:
        if r not in s.map.baselines:
            raise ScenarioValidationError(f"route references unknown baseline {r!r}")
    for bid, b in s.map.baselines.items():
        if len(b.points) < 2:
            raise ScenarioValidationError(f"baseline {bid!r} needs at least 2 points")
        if b.speed_limit <= 0:
            raise ScenarioValidationError(f"baseline {bid!r} speed_limit must be positive")
    for label, polys in (("drivable_area", s.map.drivable_area), ("static_objects", s.map.static_objects)):
        for i, p in enumerate(polys):
            if len(p) < 3:
                raise ScenarioValidationError(f"{label}[{i}] needs at least 3 vertices")
            poly = shapely.Polygon(p)
            if not poly.is_valid or poly.area <= 0:
                raise ScenarioValidationError(f"{label}[{i}] is not a simple polygon")
    seen = set()
    for a in s.agents:
        if a.id in seen:
            raise ScenarioValidationError(f"duplicate agent id {a.id!r}")
        seen.add(a.id)
        if a.length <= 0 or a.width <= 0:
            raise ScenarioValidationError(f"agent {a.id!r} footprint must be positive")
        if len(a.history) == 0:
            raise ScenarioValidationError(f"agent {a.id!r} has no history")
        ts = a.samples()[:, 0]
        if np.any(np.diff(ts) <= 0):
            raise ScenarioValidationError(f"agent {a.id!r} timestamps not strictly increasing")
        if a.history[-1, 0] > 1e-9 or (len(a.future) and a.future[0, 0] <= 0):
            raise ScenarioValidationError(f"agent {a.id!r} history must end at t<=0 and future start after 0")
    if not s.dt > 0:
        raise ScenarioValidationError("dt must be positive")
    if abs(s.expert_future.dt - s.dt) > 1e-12:
        raise ScenarioValidationError(f"expert_future.dt {s.expert_future.dt} != dt {s.dt}")
    if s.horizon < 2:
        raise ScenarioValidationError("horizon must be at least 2")
    if len(s.expert_future) < s.horizon:
        raise ScenarioValidationError(
            f"expert_future has {len(s.expert_future)} states, fewer than horizon {s.horizon}")
    if s.ego_speed < 0:
        raise ScenarioValidationError("ego speed must be non-negative")


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "map": {
            "drivable_area": [p.tolist() for p in s.map.drivable_area],
            "baseline_paths": [{"id": b.id, "points": b.points.tolist(), "speed_limit": b.speed_limit,
                                "lane_width": b.lane_width} for b in s.map.baselines.values()],
            "route": list(s.map.route),
            "static_objects": [p.tolist() for p in s.map.static_objects],
        },
        "agents": [{"id": a.id, "kind": a.kind, "length": a.length, "width": a.width,
                    "history": a.history.tolist(), "future": a.future.tolist()} for a in s.agents],
        "ego": {"x": s.ego_pose.x, "y": s.ego_pose.y, "heading": s.ego_pose.heading,
                "speed": s.ego_speed},
        "expert_future": {"dt": s.expert_future.dt, "states": s.expert_future.to_list()},
        "dt": s.dt,
        "horizon": s.horizon,
    }


def load_scenario(data) -> Scenario:
    """Parse and validate a scenario from JSON text or bytes."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ScenarioParseError("<document>", f"invalid JSON: {e}") from None
    return scenario_from_dict(doc)


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))


def read_scenario(path) -> Scenario:
    with open(path, "rb") as f:
        return load_scenario(f.read())


def write_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_scenario(s))


def ego_state(s: Scenario) -> Tuple[Pose2, float]:
    return s.ego_pose, s.ego_speed
