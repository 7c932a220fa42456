"""Closed-loop simulation harness and driving metrics.

Each replan tick builds a snapshot of the scenario from the simulated state,
runs the predictor, builds the collision density and refines the plan. The
ego then tracks the plan perfectly (cubic Hermite interpolation between
knots) until the next replan. Other agents either replay their logged
futures or follow their lane with an IDM longitudinal policy.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
import shapely
from scipy.signal import savgol_filter

from .collision import DEFAULT_WINDOW, window_mask
from .geometry import Pose2, Trajectory, interpolate_polyline, polygon_from_box, project_on_polyline, wrap_angle
from .pipeline import plan_with_bundle
from .predictor import PredictorConfig, make_predictor, snapshot
from .scenario import AgentTrack, Baseline, Scenario
from .solver import SolverConfig, SolverError

log = logging.getLogger(__name__)

AGENT_MODES = ("non_reactive", "reactive")
METRICS = ("collisions", "ttc", "drivable", "comfort", "progress", "speed_limit", "direction")


@dataclass(frozen=True)
class IDMParams:
    s0: float = 2.0
    time_headway: float = 1.5
    a_max: float = 1.5
    b: float = 2.0
    delta: float = 4.0
    desired_speed: Optional[float] = None  # None: the baseline speed limit

    def __post_init__(self):
        if min(self.s0, self.time_headway) < 0 or min(self.a_max, self.b, self.delta) <= 0:
            raise ValueError("IDM parameters must be positive")


@dataclass(frozen=True)
class SimConfig:
    replan_period: float = 0.5
    sim_dt: float = 0.1
    horizon: int = 16
    plan_dt: float = 0.5
    duration: float = 8.0
    agent_mode: str = "non_reactive"
    ttc_min: float = 1.0
    ttc_horizon: float = 3.0
    a_min: float = -4.05
    a_max: float = 2.40
    jerk_max: float = 4.13
    lat_accel_max: float = 4.89
    yaw_rate_max: float = 0.95
    comfort_window: int = 15
    min_expert_progress: float = 1.0
    speed_tolerance: float = 0.2
    idm: IDMParams = field(default_factory=IDMParams)
    window: Optional[int] = DEFAULT_WINDOW
    use_solver: bool = True
    use_heatmap: bool = True
    record_grids: bool = False
    danger_threshold: float = 0.05
    heat_threshold: float = 0.5

    def __post_init__(self):
        if self.agent_mode not in AGENT_MODES:
            raise ValueError(f"agent_mode must be one of {AGENT_MODES}, got {self.agent_mode!r}")
        if not (self.sim_dt > 0 and self.replan_period > 0 and self.duration > 0):
            raise ValueError("sim_dt, replan_period and duration must be positive")
        ratio = self.replan_period / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("replan_period must be a multiple of sim_dt")
        if (self.horizon - 1) * self.plan_dt < self.replan_period:
            raise ValueError("plan horizon must cover the replan period")
        if self.comfort_window < 5 or self.comfort_window % 2 == 0:
            raise ValueError("comfort_window must be odd and at least 5")
        if self.ttc_min <= 0:
            raise ValueError("ttc_min must be positive")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.sim_dt)) + 1

    @property
    def replan_every(self) -> int:
        return int(round(self.replan_period / self.sim_dt))

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown sim config keys: {unknown}")
        d = dict(d)
        if "idm" in d and isinstance(d["idm"], dict):
            idm_known = {f.name for f in dataclasses.fields(IDMParams)}
            bad = sorted(set(d["idm"]) - idm_known)
            if bad:
                raise ValueError(f"unknown idm keys: {bad}")
            d["idm"] = IDMParams(**d["idm"])
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SimulationLog:
    """Tick records (dicts) plus run metadata; ``ticks[i]['t'] == i * sim_dt``."""

    meta: dict
    ticks: List[dict]

    def ego_states(self) -> np.ndarray:
        return np.array([tk["ego"] for tk in self.ticks], dtype=float)

    def times(self) -> np.ndarray:
        return np.array([tk["t"] for tk in self.ticks], dtype=float)

    def events(self, kind: Optional[str] = None) -> list:
        out = []
        for tk in self.ticks:
            out.extend(e for e in tk["events"] if kind is None or e["type"] == kind)
        return out

    def to_jsonl(self) -> str:
        lines = []
        for i, tk in enumerate(self.ticks):
            rec = dict(tk, meta=self.meta) if i == 0 else tk
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SimulationLog":
        ticks = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not ticks:
            raise ValueError("empty simulation log")
        meta = ticks[0].pop("meta", {})
        return cls(meta, ticks)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "SimulationLog":
        with open(path, encoding="utf-8") as f:
            return cls.from_jsonl(f.read())


@dataclass(frozen=True)
class MetricsReport:
    collisions: float
    ttc: float
    drivable: float
    comfort: float
    progress: float
    speed_limit: float
    direction: float
    details: dict = field(default_factory=dict, compare=False)

    @property
    def aggregate(self) -> float:
        return float(np.mean([getattr(self, m) for m in METRICS]))

    def scores(self) -> dict:
        out = {m: getattr(self, m) for m in METRICS}
        out["aggregate"] = self.aggregate
        return out

    def to_dict(self) -> dict:
        return dict(self.scores(), details=self.details)


# ---------------------------------------------------------------------------
# ego execution


def hermite_state(plan: Trajectory, t: float) -> np.ndarray:
    """Plan state at time ``t`` by cubic Hermite interpolation of the positions.

    Knot velocities are speed * (cos, sin)(heading). Past the plan end the
    final state is extrapolated at constant velocity.
    """
    st = plan.states
    if t >= plan.duration:
        x, y, h, v = st[-1]
        d = v * (t - plan.duration)
        return np.array([x + d * math.cos(h), y + d * math.sin(h), h, v])
    t = max(t, 0.0)
    k = min(int(math.floor(t / plan.dt)), len(plan) - 2)
    s = t / plan.dt - k
    a, b = st[k], st[k + 1]
    va = a[3] * np.array([math.cos(a[2]), math.sin(a[2])])
    vb = b[3] * np.array([math.cos(b[2]), math.sin(b[2])])
    h00, h10, h01, h11 = 2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s, -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2
    d00, d10, d01, d11 = 6 * s ** 2 - 6 * s, 3 * s ** 2 - 4 * s + 1, -6 * s ** 2 + 6 * s, 3 * s ** 2 - 2 * s
    dt = plan.dt
    pos = h00 * a[:2] + h10 * dt * va + h01 * b[:2] + h11 * dt * vb
    vel = (d00 * a[:2] + d10 * dt * va + d01 * b[:2] + d11 * dt * vb) / dt
    speed = float(np.hypot(*vel))
    if speed > 1e-3:
        heading = math.atan2(vel[1], vel[0])
    else:
        heading = a[2] + s * wrap_angle(b[2] - a[2])
    return np.array([pos[0], pos[1], wrap_angle(heading), speed])


# ---------------------------------------------------------------------------
# reactive agents


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    speed: float
    length: float = 4.5
    width: float = 2.0

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.speed])


def idm_acceleration(v: float, gap: Optional[float], dv: float, v_des: float, p: IDMParams) -> float:
    """IDM acceleration; ``gap`` None means no leader, ``dv`` = v - v_leader."""
    free = 1.0 - (v / max(v_des, 1e-6)) ** p.delta
    if gap is None:
        return p.a_max * free
    s_star = p.s0 + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
    return p.a_max * (free - (s_star / max(gap, 1e-3)) ** 2)


def find_leader(agent: AgentState, neighbors, baseline: np.ndarray, lane_width: float = 3.5):
    """Nearest neighbor ahead in the agent's lane: (bumper gap, leader speed along the lane) or None."""
    s_a, _, _ = project_on_polyline([[agent.x, agent.y]], baseline)
    best = None
    for n in neighbors:
        s_n, lat_n, tang = project_on_polyline([[n.x, n.y]], baseline)
        ds = float(s_n[0] - s_a[0])
        if ds <= 0 or abs(lat_n[0]) > lane_width / 2:
            continue
        gap = ds - (agent.length + n.length) / 2
        if best is None or gap < best[0]:
            best = (gap, n.speed * math.cos(wrap_angle(n.heading - tang[0])))
    return best


def reactive_agent_step(agent: AgentState, neighbors, baseline, idm: IDMParams, dt: float,
                        speed_limit: Optional[float] = None, lane_width: float = 3.5) -> AgentState:
    """Advance ``agent`` along ``baseline`` by one IDM step, keeping its lateral offset."""
    line = np.asarray(baseline, dtype=float)
    v_des = idm.desired_speed if idm.desired_speed is not None else speed_limit
    if v_des is None:
        raise ValueError("desired speed needs a speed limit or IDMParams.desired_speed")
    s, lat, _ = project_on_polyline([[agent.x, agent.y]], line)
    leader = find_leader(agent, neighbors, line, lane_width)
    v = agent.speed
    if leader is None:
        acc = idm_acceleration(v, None, 0.0, v_des, idm)
    else:
        acc = idm_acceleration(v, leader[0], v - leader[1], v_des, idm)
    v_new = v + acc * dt
    if v_new < 0.0:
        # stop within the step instead of reversing
        ds = v * v / (2.0 * -acc) if acc < 0 else 0.0
        v_new = 0.0
    else:
        ds = 0.5 * (v + v_new) * dt
    if leader is not None:
        # the discrete step can undershoot s0 by a hair where the continuous model only approaches it
        room = leader[0] + max(leader[1], 0.0) * dt - idm.s0
        if ds > room:
            ds = max(room, 0.0)
            v_new = min(v_new, ds / dt)
    pts, heading = interpolate_polyline(line, s + ds)
    normal = np.array([-math.sin(heading[0]), math.cos(heading[0])])
    xy = pts[0] + lat[0] * normal
    return AgentState(float(xy[0]), float(xy[1]), float(heading[0]), float(v_new), agent.length, agent.width)


def assign_baseline(state: np.ndarray, baselines) -> Optional[Baseline]:
    """Baseline the agent is driving along (within half a lane, heading within 45 degrees)."""
    best, best_lat = None, math.inf
    for b in baselines:
        _, lat, tang = project_on_polyline([state[:2]], b.points)
        if abs(lat[0]) <= b.lane_width / 2 and abs(wrap_angle(state[2] - tang[0])) < math.pi / 4:
            if abs(lat[0]) < best_lat:
                best, best_lat = b, abs(lat[0])
    return best


# ---------------------------------------------------------------------------
# closed loop


def _state_or_hold(a: AgentTrack, t: float) -> np.ndarray:
    st = a.state_at(t)
    if st is not None:
        return st
    rows = a.samples()
    return rows[0, 1:].copy() if t < rows[0, 0] else rows[-1, 1:].copy()


def _track_for_snapshot(a: AgentTrack, history: list, t_now: float, dt: float, span: float) -> AgentTrack:
    """Track built from simulated history plus a constant-velocity future (reactive mode)."""
    hist = np.array(history, dtype=float)
    x, y, h, v = hist[-1, 1:]
    ts = np.arange(1, int(round(span / dt)) + 1) * dt
    fut = np.column_stack([t_now + ts, x + v * ts * math.cos(h), y + v * ts * math.sin(h),
                           np.full_like(ts, h), np.full_like(ts, v)])
    return AgentTrack(a.id, a.kind, a.length, a.width, hist, fut)


def _round(values, nd: int = 9) -> list:
    return [round(float(v), nd) for v in values]


def _grid_pixels(grid, threshold: float, mask=None, collapse: bool = False) -> list:
    """Sparse (t, u, v, value) listing of pixels above ``threshold``.

    ``collapse`` lists the per-pixel maximum over time under t = 0.
    """
    values = np.where(mask, grid.values, 0.0) if mask is not None else grid.values
    if collapse:
        values = values.max(axis=0, keepdims=True)
    t, v, u = np.nonzero(values > threshold)
    vals = values[t, v, u]
    return [[int(a), int(b), int(c), round(float(d), 6)] for a, b, c, d in zip(t, u, v, vals)]


def _evaluated(out, cfg: SimConfig):
    if cfg.window is None:
        return None
    return window_mask(out.density.frame, out.bundle.initial_plan.xy, cfg.window)


def run_closed_loop(s: Scenario, predictor: Union[PredictorConfig, Callable], solver_config: SolverConfig,
                    sim_config: SimConfig, seed: int = 0) -> SimulationLog:
    """Simulate ``s`` under the planner; deterministic for a fixed seed."""
    cfg = sim_config
    if s.expert_future.duration + 1e-9 < cfg.duration:
        raise ValueError(f"scenario expert covers {s.expert_future.duration} s < sim duration {cfg.duration} s")
    if abs(s.dt - cfg.plan_dt) > 1e-12 or s.horizon != cfg.horizon:
        raise ValueError("scenario dt/horizon do not match the sim config")
    pcfg = predictor if isinstance(predictor, PredictorConfig) else None
    predict = make_predictor(predictor) if pcfg is not None else predictor
    dt = cfg.sim_dt

    pose, speed = s.ego_pose, float(s.ego_speed)
    plan, plan_t0 = None, 0.0
    reactive = cfg.agent_mode == "reactive"
    lanes = {}
    agent_states = {}
    histories = {}
    for a in s.agents:
        agent_states[a.id] = _state_or_hold(a, 0.0)
        histories[a.id] = [list(r) for r in a.history]
        if reactive and a.kind == "vehicle":
            lanes[a.id] = assign_baseline(agent_states[a.id], s.map.baselines.values())

    meta = {"scenario": s.name, "seed": int(seed), "sim": cfg.to_dict(), "solver": solver_config.to_dict(),
            "predictor": pcfg.to_dict() if pcfg else getattr(predict, "__name__", "callable"),
            "ego_size": [solver_config.ego_length, solver_config.ego_width],
            "agent_sizes": {a.id: [a.length, a.width] for a in s.agents},
            "drivable_area": [p.tolist() for p in s.map.drivable_area],
            "static_objects": [p.tolist() for p in s.map.static_objects]}
    ticks = []
    for i in range(cfg.n_ticks):
        t = round(i * dt, 9)
        events = []
        rec = {"t": t, "ego": _round([pose.x, pose.y, pose.heading, speed]), "events": events}
        if i % cfg.replan_every == 0:
            if reactive:
                tracks = [_track_for_snapshot(a, histories[a.id], t, dt, (cfg.horizon - 1) * cfg.plan_dt)
                          for a in s.agents]
                snap = snapshot(s, t, pose, speed, agents=tracks)
            else:
                snap = snapshot(s, t, pose, speed)
            planner = {"replan": True}
            try:
                bundle = predict(snap, seed * 100003 + i)
                out = plan_with_bundle(snap, bundle, solver_config, cfg.use_solver, cfg.use_heatmap, cfg.window)
                new_plan = out.trajectory
                feasible = out.result.feasible if out.result is not None else True
                planner.update(initial_plan=bundle.initial_plan.to_list(), plan=new_plan.to_list(),
                               feasible=feasible)
                if out.result is not None:
                    planner.update(cost=out.result.breakdown.as_dict(), iterations=out.result.iterations)
                if cfg.record_grids:
                    planner.update(heat_frame=bundle.heatmap.frame.to_dict(),
                                   heat=_grid_pixels(bundle.heatmap, cfg.heat_threshold),
                                   danger_frame=out.density.frame.to_dict(),
                                   danger=_grid_pixels(out.density, cfg.danger_threshold, _evaluated(out, cfg), True))
            except (SolverError, ValueError, RuntimeError) as e:
                new_plan, feasible = None, False
                events.append({"type": "planner_error", "message": str(e)})
            if new_plan is not None and (feasible or plan is None):
                plan, plan_t0 = new_plan, t
                if not feasible:
                    events.append({"type": "planner_infeasible", "held": False})
            else:
                events.append({"type": "planner_infeasible", "held": True})
                log.warning("%s t=%.1f: planner failed, holding the previous plan", s.name, t)
            planner["used"] = plan.to_list() if plan is not None else None
            rec["planner"] = planner
        if plan is None:
            raise RuntimeError(f"{s.name}: no plan available at t={t}")

        rec["agents"] = {aid: _round(st) for aid, st in sorted(agent_states.items())}
        ego_next = hermite_state(plan, t + dt - plan_t0)
        rec["control"] = _round([(ego_next[3] - speed) / dt, wrap_angle(ego_next[2] - pose.heading) / dt])
        ticks.append(rec)
        if i == cfg.n_ticks - 1:
            break

        # advance agents, then the ego
        t_next = round((i + 1) * dt, 9)
        if reactive:
            ego_as = AgentState(pose.x, pose.y, pose.heading, speed, solver_config.ego_length,
                                solver_config.ego_width)
            current = {a.id: AgentState(*agent_states[a.id][:4], a.length, a.width) for a in s.agents}
            nxt = {}
            for a in s.agents:
                lane = lanes.get(a.id)
                if lane is None:
                    nxt[a.id] = _state_or_hold(a, t_next)
                    continue
                others = [ego_as] + [st for aid, st in current.items() if aid != a.id]
                stepped = reactive_agent_step(current[a.id], others, lane.points, cfg.idm, dt, lane.speed_limit,
                                              lane.lane_width)
                nxt[a.id] = stepped.array
            agent_states = nxt
        else:
            agent_states = {a.id: _state_or_hold(a, t_next) for a in s.agents}
        for aid, st in agent_states.items():
            histories[aid].append([t_next] + list(st))
        pose = Pose2(float(ego_next[0]), float(ego_next[1]), float(ego_next[2]))
        speed = float(ego_next[3])

    return SimulationLog(meta, ticks)


# ---------------------------------------------------------------------------
# metrics


def _ego_polygon(state, cfg: SolverConfig):
    return shapely.Polygon(polygon_from_box(state[0], state[1], state[2], cfg.ego_length, cfg.ego_width))


def time_to_collision(ego, ego_size, agent, agent_size, horizon: float, step: float) -> float:
    """First time footprints intersect when both move at constant velocity; inf if never."""
    for k in range(int(round(horizon / step)) + 1):
        tt = k * step
        e = polygon_from_box(ego[0] + ego[3] * tt * math.cos(ego[2]), ego[1] + ego[3] * tt * math.sin(ego[2]),
                             ego[2], *ego_size)
        a = polygon_from_box(agent[0] + agent[3] * tt * math.cos(agent[2]),
                             agent[1] + agent[3] * tt * math.sin(agent[2]), agent[2], *agent_size)
        if shapely.intersects(shapely.Polygon(e), shapely.Polygon(a)):
            return tt
    return math.inf


def comfort_signals(states: np.ndarray, dt: float, window: int) -> dict:
    """Smoothed longitudinal acceleration, jerk, yaw rate and lateral acceleration."""
    n = len(states)
    w = min(window, n if n % 2 else n - 1)
    if w < 5:
        z = np.zeros(n)
        return {"accel": z, "jerk": z, "yaw_rate": z, "lat_accel": z}
    speed = states[:, 3]
    heading = np.unwrap(states[:, 2])
    accel = savgol_filter(speed, w, 3, deriv=1, delta=dt, mode="interp")
    jerk = savgol_filter(speed, w, 3, deriv=2, delta=dt, mode="interp")
    yaw = savgol_filter(heading, w, 3, deriv=1, delta=dt, mode="interp")
    return {"accel": accel, "jerk": jerk, "yaw_rate": yaw, "lat_accel": speed * yaw}


def _route_line(s: Scenario) -> np.ndarray:
    line = s.map.route_polyline()
    return line if line is not None else s.expert_future.xy


def _direction_ok(state, baselines) -> bool:
    nearest, nearest_lat = None, math.inf
    for b in baselines:
        _, lat, tang = project_on_polyline([state[:2]], b.points)
        ok = abs(wrap_angle(state[2] - tang[0])) <= math.pi / 2
        if abs(lat[0]) <= b.lane_width / 2 and ok:
            return True
        if abs(lat[0]) < nearest_lat:
            nearest, nearest_lat = ok, abs(lat[0])
    return True if nearest is None else nearest


def _speed_limit_at(state, baselines) -> float:
    best, best_lat = math.inf, math.inf
    for b in baselines:
        _, lat, _ = project_on_polyline([state[:2]], b.points)
        if abs(lat[0]) < best_lat:
            best, best_lat = b.speed_limit, abs(lat[0])
    return best


def compute_metrics(log_: SimulationLog, s: Scenario, sim_config: SimConfig,
                    solver_config: Optional[SolverConfig] = None) -> MetricsReport:
    cfg = sim_config
    scfg = solver_config or SolverConfig()
    ego = log_.ego_states()
    times = log_.times()
    sizes = {a.id: (a.length, a.width) for a in s.agents}
    statics = [shapely.Polygon(p) for p in s.map.static_objects]
    drivable = s.map.drivable_union().buffer(1e-6)
    baselines = list(s.map.baselines.values())

    collided = set()
    events = 0
    min_ttc = math.inf
    in_drivable = speed_ok = direction_ok = 0
    for tk, st in zip(log_.ticks, ego):
        poly = _ego_polygon(st, scfg)
        hits = set()
        for aid, ast in tk["agents"].items():
            apoly = shapely.Polygon(polygon_from_box(ast[0], ast[1], ast[2], *sizes[aid]))
            if shapely.intersects(poly, apoly):
                hits.add(aid)
            ttc = time_to_collision(st, (scfg.ego_length, scfg.ego_width), ast, sizes[aid],
                                    cfg.ttc_horizon, cfg.sim_dt)
            min_ttc = min(min_ttc, ttc)
        for k, g in enumerate(statics):
            if shapely.intersects(poly, g):
                hits.add(f"static{k}")
        events += len(hits - collided)
        collided = hits
        in_drivable += bool(drivable.contains(poly)) if not drivable.is_empty else 1
        speed_ok += st[3] <= _speed_limit_at(st, baselines) + cfg.speed_tolerance if baselines else 1
        direction_ok += _direction_ok(st, baselines) if baselines else 1

    n = len(ego)
    sig = comfort_signals(ego, cfg.sim_dt, cfg.comfort_window)
    ok = ((sig["accel"] >= cfg.a_min) & (sig["accel"] <= cfg.a_max) & (np.abs(sig["jerk"]) <= cfg.jerk_max)
          & (np.abs(sig["lat_accel"]) <= cfg.lat_accel_max) & (np.abs(sig["yaw_rate"]) <= cfg.yaw_rate_max))
    comfort = 1.0 if ok.all() else float(ok.mean())

    line = _route_line(s)
    s_ego, _, _ = project_on_polyline(ego[[0, -1], :2], line)
    exp_end = s.expert_future.state_at(float(times[-1]))
    s_exp, _, _ = project_on_polyline(np.array([s.expert_future.states[0, :2], exp_end[:2]]), line)
    expert_progress = float(s_exp[1] - s_exp[0])
    ego_progress = float(s_ego[1] - s_ego[0])
    if expert_progress < cfg.min_expert_progress:
        progress = 1.0 if ego_progress >= expert_progress - cfg.min_expert_progress else 0.0
    else:
        progress = float(np.clip(ego_progress / expert_progress, 0.0, 1.0))

    ttc_score = 1.0 if min_ttc >= cfg.ttc_min else float(np.clip(min_ttc / cfg.ttc_min, 0.0, 1.0))
    details = {"collision_events": events, "min_ttc": min_ttc if math.isfinite(min_ttc) else None,
               "ego_progress": ego_progress, "expert_progress": expert_progress,
               "planner_failures": len(log_.events("planner_infeasible")) + len(log_.events("planner_error")),
               "max_abs_jerk": float(np.max(np.abs(sig["jerk"]))),
               "min_accel": float(np.min(sig["accel"])), "max_accel": float(np.max(sig["accel"]))}
    return MetricsReport(
        collisions=0.0 if events else 1.0,
        ttc=ttc_score,
        drivable=float(in_drivable) / n,
        comfort=comfort,
        progress=progress,
        speed_limit=float(speed_ok) / n,
        direction=float(direction_ok) / n,
        details=details,
    )


# ---------------------------------------------------------------------------
# batch evaluation


def _evaluate_one(args) -> dict:
    s, pcfg, scfg, simcfg, seed = args
    try:
        log_ = run_closed_loop(s, pcfg, scfg, simcfg, seed)
        return {"name": s.name, "ok": True, "report": compute_metrics(log_, s, simcfg, scfg)}
    except Exception as e:  # reported per row, the batch keeps going
        return {"name": s.name, "ok": False, "error": f"{type(e).__name__}: {e}"}


def default_workers() -> int:
    env = os.environ.get("HEATPLAN_THREADS")
    if env is None or env == "":
        return os.cpu_count() or 1
    return max(int(env), 0)


def evaluate_batch(scenarios, predictor: PredictorConfig, solver_config: SolverConfig, sim_config: SimConfig,
                   seed: int = 0, workers: Optional[int] = None) -> list:
    """Closed-loop metrics for each scenario, in input order.

    ``workers`` 0 or 1 runs sequentially; otherwise a process pool is used.
    Results do not depend on the execution order.
    """
    workers = default_workers() if workers is None else workers
    jobs = [(s, predictor, solver_config, sim_config, seed) for s in scenarios]
    if workers <= 1 or len(jobs) <= 1:
        return [_evaluate_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_evaluate_one, jobs))
