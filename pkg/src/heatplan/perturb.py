"""Start-pose perturbation and recovery-trajectory fitting for augmentation.

A recovery trajectory is the target plus a quintic correction ``q(t)`` in x
and y. ``q`` starts at the position and velocity offset of the perturbed
start (zero acceleration offset) and vanishes with its first two derivatives
at the blend end, after which the target is followed exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Pose2, Trajectory, wrap_angle
from .scenario import Scenario, validate_scenario
from .solver import SolverConfig, hard_violations, is_feasible


@dataclass(frozen=True)
class PerturbRanges:
    x: tuple = (0.0, 1.0)
    y: tuple = (-1.0, 1.0)
    heading: tuple = (-0.25, 0.25)

    def __post_init__(self):
        for name in ("x", "y", "heading"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"range {name} is not ordered: {lo} > {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))

    @classmethod
    def zero(cls) -> "PerturbRanges":
        return cls((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbRanges":
        unknown = set(d) - {"x", "y", "heading"}
        if unknown:
            raise ValueError(f"unknown perturb keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in dataclasses.asdict(self).items()}


class RecoveryFitError(RuntimeError):
    pass


def sample_offsets(ranges: PerturbRanges, seed: int, n: Optional[int] = None) -> np.ndarray:
    """Uniform (dx, dy, dheading) draws; shape (3,) or (n, 3)."""
    rng = np.random.default_rng(seed)
    size = None if n is None else (n,)
    cols = [rng.uniform(lo, hi, size) if hi > lo else np.full(size or (), lo)
            for lo, hi in (ranges.x, ranges.y, ranges.heading)]
    return np.stack(cols, axis=-1)


def perturb_pose(p: Pose2, ranges: PerturbRanges, seed: int) -> Pose2:
    """Jitter a pose by offsets expressed in its own frame (x forward)."""
    dx, dy, dh = sample_offsets(ranges, seed)
    if dx == 0.0 and dy == 0.0 and dh == 0.0:
        return p
    return p.compose(float(dx), float(dy), float(dh))


def _quintic(p0: float, v0: float, tb: float) -> np.ndarray:
    """Coefficients c0..c5 with q(0)=p0, q'(0)=v0, q''(0)=0, q=q'=q''=0 at tb."""
    A = np.array([[tb ** 3, tb ** 4, tb ** 5],
                  [3 * tb ** 2, 4 * tb ** 3, 5 * tb ** 4],
                  [6 * tb, 12 * tb ** 2, 20 * tb ** 3]])
    b = -np.array([p0 + v0 * tb, v0, 0.0])
    c3, c4, c5 = np.linalg.solve(A, b)
    return np.array([p0, v0, 0.0, c3, c4, c5])


def _poly(c: np.ndarray, t: np.ndarray, tb: float) -> tuple:
    tt = np.minimum(t, tb)
    q = sum(c[i] * tt ** i for i in range(6))
    dq = sum(i * c[i] * tt ** (i - 1) for i in range(1, 6))
    inside = t < tb
    return np.where(inside, q, 0.0), np.where(inside, dq, 0.0)


def blend_to_start(target: Trajectory, start: Pose2, speed: float, blend_time: float) -> Trajectory:
    """Target with a quintic correction from ``(start, speed)`` fading out at ``blend_time``."""
    st = target.states
    t = target.times
    v_target = st[:, 3:4] * np.stack([np.cos(st[:, 2]), np.sin(st[:, 2])], axis=1)
    v_start = speed * np.array([np.cos(start.heading), np.sin(start.heading)])
    dp = start.xy - st[0, :2]
    dv = v_start - v_target[0]
    if not np.any(dp) and not np.any(dv) and wrap_angle(start.heading - st[0, 2]) == 0.0:
        return target
    cx, cy = _quintic(dp[0], dv[0], blend_time), _quintic(dp[1], dv[1], blend_time)
    qx, dqx = _poly(cx, t, blend_time)
    qy, dqy = _poly(cy, t, blend_time)
    vel = v_target + np.stack([dqx, dqy], axis=1)
    cross = v_target[:, 0] * vel[:, 1] - v_target[:, 1] * vel[:, 0]
    dot = np.einsum("ij,ij->i", v_target, vel)
    heading = st[:, 2] + np.arctan2(cross, dot)
    speeds = np.hypot(vel[:, 0], vel[:, 1])
    heading[0], speeds[0] = start.heading, speed
    return Trajectory.from_arrays(target.dt, st[:, 0] + qx, st[:, 1] + qy, heading, speeds)


def fit_recovery_trajectory(start: Pose2, speed: float, target: Trajectory,
                            config: Optional[SolverConfig] = None, min_blend: float = 3.0) -> Trajectory:
    """Smooth recovery from a perturbed start back onto ``target``.

    The blend starts at ``min_blend`` seconds and is extended one step at a
    time up to the full horizon until every hard bound holds.
    """
    if len(target) < 4:
        raise ValueError("target needs at least 4 states")
    config = config or SolverConfig()
    horizon = target.duration
    steps = np.arange(1, len(target)) * target.dt
    candidates = [tb for tb in steps if tb >= min(min_blend, horizon) - 1e-9]
    worst = None
    for tb in candidates:
        traj = blend_to_start(target, start, speed, float(tb))
        if is_feasible(traj, config):
            return traj
        worst = hard_violations(traj, config)
    raise RecoveryFitError(f"no feasible recovery up to the full horizon; violations {worst}")


def augment_sample(s: Scenario, ranges: PerturbRanges, seed: int,
                   config: Optional[SolverConfig] = None) -> Scenario:
    """Scenario with a perturbed ego start and the matching recovery expert."""
    pose = perturb_pose(s.ego_pose, ranges, seed)
    if pose is s.ego_pose:
        return s
    expert = fit_recovery_trajectory(pose, s.ego_speed, s.expert_future, config)
    out = dataclasses.replace(s, ego_pose=pose, expert_future=expert)
    validate_scenario(out)
    return out
