"""Prediction bundles and the deterministic predictors standing in for a network.

A predictor maps ``(scenario, seed)`` to a ``PredictionBundle``: the initial
plan, a heatmap on the fine frame and agent occupancy on the coarse frame.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import GridFrame, Pose2, Trajectory, wrap_angle
from .perturb import blend_to_start
from .raster import (SpatialTemporalGrid, box_mask, default_frames, read_grid, render_heatmap_target,
                     render_occupancy_target, write_grid)
from .scenario import AgentTrack, Scenario

PREDICTORS = ("expert", "constant_velocity", "noised_expert")


class PredictionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    initial_plan: Trajectory
    heatmap: SpatialTemporalGrid
    occupancy: SpatialTemporalGrid

    def __post_init__(self):
        T = len(self.initial_plan)
        if self.heatmap.timesteps != T or self.occupancy.timesteps != T:
            raise PredictionError(f"bundle horizons differ: plan {T}, heatmap {self.heatmap.timesteps}, "
                                  f"occupancy {self.occupancy.timesteps}")

    @property
    def horizon(self) -> int:
        return len(self.initial_plan)


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "constant_velocity"
    gamma: float = 0.97
    sigma_px: float = 4.0
    width: int = 224
    height: int = 224
    resolution: float = 0.5
    fine_resolution: float = 0.25
    noise_lateral: float = 0.0
    noise_longitudinal: float = 0.0

    def __post_init__(self):
        if self.kind not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.kind!r}; expected one of {PREDICTORS}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.noise_lateral < 0 or self.noise_longitudinal < 0:
            raise ValueError("noise amplitudes must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown predictor config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def frames(self, pose: Pose2) -> tuple:
        return default_frames(pose, self.width, self.height, self.resolution, self.fine_resolution)


def plan_from_expert(s: Scenario) -> Trajectory:
    """First ``horizon`` expert states as the initial plan."""
    st = s.expert_future.states[:s.horizon]
    return Trajectory(s.dt, st)


def constant_velocity_occupancy(agents, frame: GridFrame, T: int, dt: float,
                                gamma: float) -> SpatialTemporalGrid:
    """Footprints extrapolated at each agent's t=0 velocity, scaled by gamma^t."""
    out = np.zeros((T,) + frame.shape)
    for a in agents:
        if len(a.history) == 0:
            raise PredictionError(f"agent {a.id} has no history")
        _, x, y, h, v = a.current
        for k in range(T):
            d = v * k * dt
            m = box_mask(frame, x + d * math.cos(h), y + d * math.sin(h), h, a.length, a.width)
            out[k][m] = np.maximum(out[k][m], gamma ** k)
    return SpatialTemporalGrid(frame, out)


def expert_predictor(s: Scenario, config: PredictorConfig, seed: int = 0) -> PredictionBundle:
    """Expert plan with ground-truth occupancy."""
    coarse, fine = config.frames(s.ego_pose)
    plan = plan_from_expert(s)
    heat = render_heatmap_target(plan, fine, config.sigma_px)
    occ = render_occupancy_target(s.agents, coarse, s.horizon, s.dt)
    return PredictionBundle(plan, heat, occ)


def constant_velocity_predictor(s: Scenario, config: PredictorConfig, seed: int = 0) -> PredictionBundle:
    coarse, fine = config.frames(s.ego_pose)
    plan = plan_from_expert(s)
    heat = render_heatmap_target(plan, fine, config.sigma_px)
    occ = constant_velocity_occupancy(s.agents, coarse, s.horizon, s.dt, config.gamma)
    return PredictionBundle(plan, heat, occ)


def _smooth_noise(rng, t: np.ndarray, horizon: float, amplitude: float) -> tuple:
    """A * c * (1 - cos(w t)) / 2 and its time derivative; |value| <= A, zero at t=0."""
    c = rng.uniform(-1.0, 1.0)
    w = 2.0 * math.pi * rng.uniform(0.5, 1.5) / max(horizon, 1e-9)
    val = amplitude * c * (1.0 - np.cos(w * t)) / 2.0
    der = amplitude * c * w * np.sin(w * t) / 2.0
    return val, der


def noise_plan(plan: Trajectory, lateral: float, longitudinal: float, seed: int) -> Trajectory:
    """Expert corrupted by smooth offsets along and across its heading."""
    if lateral == 0.0 and longitudinal == 0.0:
        return plan
    rng = np.random.default_rng(seed)
    t = plan.times
    lat, dlat = _smooth_noise(rng, t, plan.duration, lateral)
    lon, dlon = _smooth_noise(rng, t, plan.duration, longitudinal)
    st = plan.states
    c, s = np.cos(st[:, 2]), np.sin(st[:, 2])
    x = st[:, 0] + lon * c - lat * s
    y = st[:, 1] + lon * s + lat * c
    along = st[:, 3] + dlon
    heading = wrap_angle(st[:, 2] + np.arctan2(dlat, along))
    speed = np.hypot(along, dlat)
    return Trajectory.from_arrays(plan.dt, x, y, heading, speed)


def noised_expert_predictor(s: Scenario, config: PredictorConfig, seed: int = 0) -> PredictionBundle:
    coarse, fine = config.frames(s.ego_pose)
    expert = plan_from_expert(s)
    plan = noise_plan(expert, config.noise_lateral, config.noise_longitudinal, seed)
    heat = render_heatmap_target(expert, fine, config.sigma_px)
    occ = render_occupancy_target(s.agents, coarse, s.horizon, s.dt)
    return PredictionBundle(plan, heat, occ)


_DISPATCH = {"expert": expert_predictor, "constant_velocity": constant_velocity_predictor,
             "noised_expert": noised_expert_predictor}


def predict(s: Scenario, config: PredictorConfig, seed: int = 0) -> PredictionBundle:
    return _DISPATCH[config.kind](s, config, seed)


def make_predictor(config: PredictorConfig) -> Callable[[Scenario, int], PredictionBundle]:
    fn = _DISPATCH[config.kind]
    return lambda s, seed=0: fn(s, config, seed)


# ---------------------------------------------------------------------------
# closed-loop snapshots


def _shift_track(a: AgentTrack, t_now: float) -> AgentTrack:
    rows = a.samples().copy()
    rows[:, 0] -= t_now
    past = rows[rows[:, 0] <= 1e-9]
    if len(past) == 0:
        past = rows[:1]
    return AgentTrack(a.id, a.kind, a.length, a.width, past, rows[rows[:, 0] > 1e-9])


def _expert_segment(expert: Trajectory, t_now: float, n: int) -> Trajectory:
    """Expert from ``t_now`` on; holds the final heading at constant speed past its end."""
    times = t_now + np.arange(n) * expert.dt
    st = np.empty((n, 4))
    last_t = expert.duration
    for i, t in enumerate(times):
        if t <= last_t:
            st[i] = expert.state_at(t)
        else:
            x, y, h, v = expert.states[-1]
            st[i] = (x + v * (t - last_t) * math.cos(h), y + v * (t - last_t) * math.sin(h), h, v)
    return Trajectory(expert.dt, st)


def snapshot(s: Scenario, t_now: float, ego_pose: Pose2, ego_speed: float,
             agents=None, blend_time: float = 3.0) -> Scenario:
    """Scenario as seen at ``t_now`` from the simulated ego state.

    Agent tracks are re-timed so ``t_now`` becomes 0 (``agents`` may supply
    already-simulated tracks). The expert is re-anchored to the current ego
    with a quintic correction.
    """
    tracks = [_shift_track(a, t_now) for a in (s.agents if agents is None else agents)]
    n = max(len(s.expert_future), s.horizon)
    seg = _expert_segment(s.expert_future, t_now, n)
    blend = min(blend_time, seg.duration)
    anchored = blend_to_start(seg, ego_pose, ego_speed, blend)
    return dataclasses.replace(s, agents=tracks, ego_pose=ego_pose, ego_speed=float(ego_speed),
                               expert_future=anchored)


# ---------------------------------------------------------------------------
# external bundles


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {"dt": traj.dt, "states": traj.to_list()}


def trajectory_from_dict(d: dict) -> Trajectory:
    return Trajectory(float(d["dt"]), np.asarray(d["states"], dtype=float))


def save_bundle(bundle: PredictionBundle, plan_path, heatmap_path, occupancy_path) -> None:
    with open(plan_path, "w") as f:
        json.dump(trajectory_to_dict(bundle.initial_plan), f, sort_keys=True)
    write_grid(bundle.heatmap, heatmap_path)
    write_grid(bundle.occupancy, occupancy_path)


def load_bundle(plan_path, heatmap_path, occupancy_path) -> PredictionBundle:
    """Bundle from a plan JSON and two binary grids (e.g. produced by a network)."""
    with open(plan_path) as f:
        plan = trajectory_from_dict(json.load(f))
    return PredictionBundle(plan, read_grid(heatmap_path), read_grid(occupancy_path))
