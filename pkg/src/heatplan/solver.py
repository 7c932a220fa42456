"""Post-solver refining an initial plan against imitation, comfort, collision
and heatmap costs under hard kinematic bounds.

Decision variables are the states 1..T-1 of (x, y, heading); state 0 is the
current ego pose and stays fixed. The objective is

    f(tau) = l_imi * sum_t |tau_t - ref_t|
           + sum_phi l_phi * sum_t phi_t(tau)^2
           + l_o * sum_t D_o(tau_t) - l_h * sum_t D_h(tau_t)

where D_o / D_h are Gaussian-weighted sums over a per-plane sample of
collision-density / heatmap pixels. Hard bounds enter as squared hinge
penalties with a growing weight; the returned plan is the cheapest iterate
that satisfies every bound.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.optimize import minimize

from .geometry import (GridFrame, Trajectory, kinematics_backward, kinematics_forward, unwrap_headings,
                       wrap_angle)
from .raster import SpatialTemporalGrid

logger = logging.getLogger(__name__)

PHI = ("jerk", "curvature", "curvature_rate", "accel", "lateral_accel")
_SQRT_2PI = math.sqrt(2.0 * math.pi)
TRUNCATION = 9.0


@dataclass(frozen=True)
class SolverConfig:
    lambda_imi: float = 1.0
    lambda_o: float = 30.0
    lambda_h: float = 0.1
    # weights of the comfort set
    w_jerk: float = 0.01
    w_curvature: float = 0.1
    w_curvature_rate: float = 0.1
    w_accel: float = 0.01
    w_lateral_accel: float = 0.01
    w_theta: float = 1.0
    sigma_o: float = 1.0
    sigma_h: float = 1.0
    s_o: int = 64
    s_h: int = 32
    eps_occ: float = 0.05
    # hard bounds
    a_min: float = -4.0
    a_max: float = 3.0
    j_max: float = 4.0
    kappa_max: float = 0.3
    lat_max: float = 4.0
    v_max: float = 20.0
    slip_max: float = 0.5
    # vehicle
    ego_length: float = 4.0
    ego_width: float = 2.0
    wheelbase: float = 2.7
    # optimizer
    max_iters: int = 100
    tol: float = 1e-9
    penalty_mu0: float = 1.0
    penalty_growth: float = 10.0
    penalty_rounds: int = 5
    projection_passes: int = 50
    feas_tol: float = 1e-6
    # penalties act on bounds tightened by this fraction so that iterates land inside
    penalty_margin: float = 0.05

    def __post_init__(self):
        weights = [self.lambda_imi, self.lambda_o, self.lambda_h, self.w_jerk, self.w_curvature,
                   self.w_curvature_rate, self.w_accel, self.w_lateral_accel, self.w_theta]
        if any(not (w >= 0) for w in weights):
            raise ValueError("cost weights must be non-negative")
        if not (self.sigma_o > 0 and self.sigma_h > 0):
            raise ValueError("sigma_o and sigma_h must be positive")
        if self.s_o < 1 or self.s_h < 1:
            raise ValueError("sample counts must be at least 1")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        for name in ("j_max", "kappa_max", "lat_max", "v_max", "slip_max", "ego_length", "ego_width",
                     "wheelbase", "penalty_mu0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.penalty_margin < 1:
            raise ValueError("penalty_margin must be in [0, 1)")
        if self.penalty_growth < 1 or self.penalty_rounds < 1 or self.max_iters < 1:
            raise ValueError("bad optimizer schedule")

    @property
    def phi_weights(self) -> Dict[str, float]:
        return {"jerk": self.w_jerk, "curvature": self.w_curvature,
                "curvature_rate": self.w_curvature_rate, "accel": self.w_accel,
                "lateral_accel": self.w_lateral_accel}

    @property
    def footprint(self) -> tuple:
        return (self.ego_length, self.ego_width)

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown solver config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SolverConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class SolverError(RuntimeError):
    """Raised on a non-finite cost; ``last_valid`` is the last finite iterate."""

    def __init__(self, message: str, last_valid: Optional[Trajectory] = None):
        super().__init__(message)
        self.last_valid = last_valid


@dataclass
class CostBreakdown:
    imitation: float = 0.0
    jerk: float = 0.0
    curvature: float = 0.0
    curvature_rate: float = 0.0
    accel: float = 0.0
    lateral_accel: float = 0.0
    collision: float = 0.0
    heatmap: float = 0.0  # enters negatively, already signed

    @property
    def total(self) -> float:
        return (self.imitation + self.jerk + self.curvature + self.curvature_rate + self.accel
                + self.lateral_accel + self.collision + self.heatmap)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["total"] = self.total
        return d


@dataclass
class RefinementResult:
    trajectory: Trajectory
    breakdown: CostBreakdown
    initial_breakdown: CostBreakdown
    iterations: int
    converged: bool
    feasible: bool
    violations: Dict[str, float] = field(default_factory=dict)
    projected: bool = False

    @property
    def cost(self) -> float:
        return self.breakdown.total


# ---------------------------------------------------------------------------
# per-segment dynamic consistency
#
# Central differences cannot see an alternating (zig-zag) pattern of states, so
# knot-level bounds alone let a plan hop around obstacles one knot at a time.
# Each segment k -> k+1 must also follow a unicycle step: its chord runs along
# the mean heading (segment slip), the heading change is at most kappa_max
# times the chord length (segment turn) and consecutive chord speeds differ by
# an admissible acceleration (segment accel).


@dataclass
class SegmentTape:
    dt: float
    dx: np.ndarray
    dy: np.ndarray
    dth: np.ndarray
    sin_mid: np.ndarray
    cos_mid: np.ndarray
    length: np.ndarray
    slip: np.ndarray
    turn: np.ndarray
    accel: np.ndarray
    kappa_max: float


def segments_forward(x, y, theta, dt: float, kappa_max: float) -> SegmentTape:
    th = unwrap_headings(theta)
    dx, dy, dth = np.diff(x), np.diff(y), np.diff(th)
    mid = 0.5 * (th[1:] + th[:-1])
    sm, cm = np.sin(mid), np.cos(mid)
    length = np.sqrt(dx * dx + dy * dy + 1e-12)
    slip = (-sm * dx + cm * dy) / dt
    turn = np.abs(dth) - kappa_max * length
    accel = np.diff(length) / (dt * dt)
    return SegmentTape(dt, dx, dy, dth, sm, cm, length, slip, turn, accel, kappa_max)


def segments_backward(tape: SegmentTape, g_slip, g_turn, g_accel) -> tuple:
    k = tape.kappa_max
    g_len = -g_turn * k
    g_len[1:] += g_accel / (tape.dt * tape.dt)
    g_len[:-1] -= g_accel / (tape.dt * tape.dt)
    g_dx = -g_slip * tape.sin_mid / tape.dt + g_len * tape.dx / tape.length
    g_dy = g_slip * tape.cos_mid / tape.dt + g_len * tape.dy / tape.length
    g_mid = g_slip * (-tape.cos_mid * tape.dx - tape.sin_mid * tape.dy) / tape.dt
    g_dth = g_turn * np.sign(tape.dth)
    n = len(tape.dx) + 1
    gx, gy, gth = np.zeros(n), np.zeros(n), np.zeros(n)
    gx[1:] += g_dx
    gx[:-1] -= g_dx
    gy[1:] += g_dy
    gy[:-1] -= g_dy
    gth[1:] += 0.5 * g_mid + g_dth
    gth[:-1] += 0.5 * g_mid - g_dth
    return gx, gy, gth


# ---------------------------------------------------------------------------
# sampled Gaussian terms


def _gauss_sum(xy, pts, vals, sigma):
    """sum_i v_i N(|p - q_i|; sigma) and its gradient in p, batched over rows."""
    d = xy[:, None, :] - pts
    g = vals * np.exp(-(d[..., 0] ** 2 + d[..., 1] ** 2) / (2.0 * sigma * sigma)) / (sigma * _SQRT_2PI)
    value = g.sum(axis=1)
    grad = -(g[..., None] * d).sum(axis=1) / (sigma * sigma)
    return value, grad


class OccupiedSampler:
    """Nearest-occupied-pixel sample sets for every plane of a density map.

    Occupied pixels have value > ``eps_occ``. The ``count`` nearest to a query
    (Euclidean, ties by row-major index) are taken among pixels within
    ``cutoff`` meters; beyond ``TRUNCATION`` sigmas a pixel's Gaussian weight
    is below 3e-18 of the peak and is dropped.
    """

    def __init__(self, grid: SpatialTemporalGrid, eps_occ: float, count: int, cutoff: float):
        self.frame = grid.frame
        self.count = int(count)
        self.cutoff_px = cutoff / self.frame.resolution
        r = int(math.ceil(self.cutoff_px)) + 1
        self._r = r
        self._p = p = 2 * r + 1
        occ = np.pad(grid.values > eps_occ, ((0, 0), (p, p), (p, p)))
        self._patches = np.lib.stride_tricks.sliding_window_view(occ, (2 * r + 1, 2 * r + 1), axis=(1, 2))
        self._off = np.arange(-r, r + 1)

    def batch(self, uv: np.ndarray) -> tuple:
        """Rows, cols of the sample set per plane, shape (T, count); -1 marks padding."""
        T = uv.shape[0]
        h, w = self.frame.shape
        r, p = self._r, self._p
        # far-off queries are clamped; their patches then hold only padding
        cu = np.clip(np.rint(uv[:, 0]).astype(int), -r - 1, w + r)
        cv = np.clip(np.rint(uv[:, 1]).astype(int), -r - 1, h + r)
        occ = self._patches[np.arange(T), cv + p - r, cu + p - r].reshape(T, -1)
        cols1 = cu[:, None] + self._off
        rows1 = cv[:, None] + self._off
        d2 = (((rows1 - uv[:, 1:]) ** 2)[:, :, None] + ((cols1 - uv[:, :1]) ** 2)[:, None, :]).reshape(T, -1)
        valid = occ & (d2 <= self.cutoff_px ** 2)
        k = min(self.count, valid.shape[1])
        # patch order is row-major, so a stable sort on distance breaks ties by row-major index
        order = np.argsort(np.where(valid, d2, np.inf), axis=1, kind="stable")[:, :k]
        keep = np.take_along_axis(valid, order, 1)
        n = 2 * r + 1
        sel_r = np.where(keep, np.take_along_axis(rows1, order // n, 1), -1)
        sel_c = np.where(keep, np.take_along_axis(cols1, order % n, 1), -1)
        if k < self.count:
            pad = ((0, 0), (0, self.count - k))
            sel_r = np.pad(sel_r, pad, constant_values=-1)
            sel_c = np.pad(sel_c, pad, constant_values=-1)
        return sel_r, sel_c


def _pixel_points(frame: GridFrame, values: np.ndarray, rows, cols) -> tuple:
    valid = rows >= 0
    r, c = np.where(valid, rows, 0), np.where(valid, cols, 0)
    pts = frame.grid_to_world(np.stack([c, r], axis=-1))
    T = values.shape[0]
    vals = np.where(valid, values[np.arange(T)[:, None], r, c], 0.0)
    return pts, vals


def collision_term(pose_xy, density_plane: np.ndarray, frame: GridFrame, config: SolverConfig) -> tuple:
    """D_o at one position: (value, d/d(x, y), empty_sample_flag)."""
    grid = SpatialTemporalGrid(frame, np.asarray(density_plane)[None])
    sampler = OccupiedSampler(grid, config.eps_occ, config.s_o, TRUNCATION * config.sigma_o)
    xy = np.asarray(pose_xy, dtype=float)[None, :2]
    rows, cols = sampler.batch(frame.world_to_grid(xy))
    if not np.any(rows >= 0):
        return 0.0, np.zeros(2), True
    pts, vals = _pixel_points(frame, grid.values, rows, cols)
    val, grad = _gauss_sum(xy, pts, vals, config.sigma_o)
    return float(val[0]), grad[0], False


def top_pixels(grid: SpatialTemporalGrid, count: int) -> tuple:
    """Row/col of the ``count`` largest values per plane, ties by row-major index."""
    T = grid.timesteps
    h, w = grid.frame.shape
    flat = grid.values.reshape(T, -1)
    idx = np.arange(h * w)
    order = np.empty((T, min(count, h * w)), dtype=int)
    for t in range(T):
        # partition first so the lexsort only sees a short candidate list
        k = min(count, h * w)
        cand = np.flatnonzero(flat[t] >= 0.5 * flat[t].max())
        if len(cand) < k:
            kth = np.partition(flat[t], h * w - k)[h * w - k]
            cand = np.flatnonzero(flat[t] >= kth)
        o = np.lexsort((cand, -flat[t, cand]))[:k]
        order[t] = cand[o]
    rows, cols = np.divmod(order, w)
    return rows, cols


def heatmap_term(pose_xy, heat_plane: np.ndarray, frame: GridFrame, config: SolverConfig) -> tuple:
    """D_h at one position: (value, d/d(x, y)). Enters the cost with a minus sign."""
    grid = SpatialTemporalGrid(frame, np.asarray(heat_plane)[None])
    rows, cols = top_pixels(grid, config.s_h)
    pts, vals = _pixel_points(frame, grid.values, rows, cols)
    val, grad = _gauss_sum(np.asarray(pose_xy, dtype=float)[None, :2], pts, vals, config.sigma_h)
    return float(val[0]), grad[0]


# ---------------------------------------------------------------------------


class CostModel:
    """Planning objective with precomputed sample structures; reusable across calls."""

    def __init__(self, reference: Trajectory, density: Optional[SpatialTemporalGrid],
                 heat: Optional[SpatialTemporalGrid], config: SolverConfig, pin_initial_speed: bool = True):
        T = len(reference)
        for g, name in ((density, "density"), (heat, "heatmap")):
            if g is not None and g.timesteps != T:
                raise ValueError(f"{name} has {g.timesteps} planes, plan has {T} states")
        self.ref = reference
        self.config = config
        self.dt = reference.dt
        self.T = T
        self.initial_speed = float(reference.speeds[0]) if pin_initial_speed else None
        self.density = density if config.lambda_o > 0 else None
        self.heat = heat if config.lambda_h > 0 else None
        self._sampler = None
        if self.density is not None:
            self._sampler = OccupiedSampler(self.density, config.eps_occ, config.s_o,
                                            TRUNCATION * config.sigma_o)
        if self.heat is not None:
            rows, cols = top_pixels(self.heat, config.s_h)
            self._heat_pts, self._heat_vals = _pixel_points(self.heat.frame, self.heat.values, rows, cols)

    # -- pieces -------------------------------------------------------------

    def collision(self, xy: np.ndarray) -> tuple:
        if self.density is None:
            return np.zeros(self.T), np.zeros((self.T, 2))
        uv = self.density.frame.world_to_grid(xy)
        rows, cols = self._sampler.batch(uv)
        pts, vals = _pixel_points(self.density.frame, self.density.values, rows, cols)
        return _gauss_sum(xy, pts, vals, self.config.sigma_o)

    def heatmap(self, xy: np.ndarray) -> tuple:
        if self.heat is None:
            return np.zeros(self.T), np.zeros((self.T, 2))
        return _gauss_sum(xy, self._heat_pts, self._heat_vals, self.config.sigma_h)

    def evaluate(self, states: np.ndarray, penalty_mu: float = 0.0) -> tuple:
        """(breakdown, penalty, gradient (T, 3)) for an array of (x, y, heading)."""
        cfg = self.config
        x, y, th = states[:, 0], states[:, 1], states[:, 2]
        ref = self.ref.states
        grad = np.zeros((self.T, 3))
        out = CostBreakdown()

        # imitation
        dx, dy = x - ref[:, 0], y - ref[:, 1]
        dth = wrap_angle(th - ref[:, 2])
        norm = np.sqrt(dx * dx + dy * dy + (cfg.w_theta * dth) ** 2)
        out.imitation = cfg.lambda_imi * float(norm.sum())
        safe = np.where(norm > 0, norm, 1.0)
        scale = np.where(norm > 0, cfg.lambda_imi / safe, 0.0)
        grad[:, 0] += scale * dx
        grad[:, 1] += scale * dy
        grad[:, 2] += scale * cfg.w_theta ** 2 * dth

        # comfort set and penalties share one reverse pass
        tape = kinematics_forward(x, y, th, self.dt, self.initial_speed)
        cot = {}
        for name, w in cfg.phi_weights.items():
            q = getattr(tape, name)
            setattr(out, name, w * float(np.dot(q, q)))
            cot[name] = 2.0 * w * q
        penalty = 0.0
        g_speed = np.zeros(self.T)
        g_slip = np.zeros(self.T)
        if penalty_mu > 0:
            shrink = 1.0 - cfg.penalty_margin
            for name, lo, hi in self._bounds(shrink):
                q = tape.speed if name == "speed" else getattr(tape, name)
                over = np.maximum(q - hi, 0.0)
                under = np.minimum(q - lo, 0.0) if lo is not None else np.zeros_like(q)
                penalty += penalty_mu * float(np.dot(over, over) + np.dot(under, under))
                g = 2.0 * penalty_mu * (over + under)
                if name == "speed":
                    g_speed += g
                elif name == "slip":
                    g_slip += g
                else:
                    cot[name] = cot.get(name, 0.0) + g
            seg = segments_forward(x, y, th, self.dt, cfg.kappa_max * shrink)
            s_over = np.maximum(np.abs(seg.slip) - cfg.slip_max * shrink, 0.0) * np.sign(seg.slip)
            t_over = np.maximum(seg.turn, 0.0)
            a_over = np.maximum(seg.accel - cfg.a_max * shrink, 0.0) + np.minimum(seg.accel - cfg.a_min * shrink, 0.0)
            penalty += penalty_mu * float(np.dot(s_over, s_over) + np.dot(t_over, t_over) + np.dot(a_over, a_over))
            sx, sy, sth = segments_backward(seg, 2.0 * penalty_mu * s_over, 2.0 * penalty_mu * t_over,
                                            2.0 * penalty_mu * a_over)
            grad[:, 0] += sx
            grad[:, 1] += sy
            grad[:, 2] += sth
        gx, gy, gth = kinematics_backward(tape, g_accel=cot.get("accel"), g_jerk=cot.get("jerk"),
                                          g_curvature=cot.get("curvature"),
                                          g_curvature_rate=cot.get("curvature_rate"),
                                          g_lateral_accel=cot.get("lateral_accel"), g_slip=g_slip,
                                          g_speed=g_speed)
        grad[:, 0] += gx
        grad[:, 1] += gy
        grad[:, 2] += gth

        xy = states[:, :2]
        if self.density is not None:
            v, g = self.collision(xy)
            out.collision = cfg.lambda_o * float(v.sum())
            grad[:, :2] += cfg.lambda_o * g
        if self.heat is not None:
            v, g = self.heatmap(xy)
            out.heatmap = -cfg.lambda_h * float(v.sum())
            grad[:, :2] -= cfg.lambda_h * g
        return out, penalty, grad

    def _bounds(self, f: float = 1.0):
        c = self.config
        return (("accel", f * c.a_min, f * c.a_max), ("jerk", -f * c.j_max, f * c.j_max),
                ("curvature", -f * c.kappa_max, f * c.kappa_max),
                ("lateral_accel", -f * c.lat_max, f * c.lat_max),
                ("speed", None, f * c.v_max), ("slip", -f * c.slip_max, f * c.slip_max))


def total_cost(traj: Trajectory, reference: Trajectory, density: Optional[SpatialTemporalGrid],
               heat: Optional[SpatialTemporalGrid], config: SolverConfig,
               pin_initial_speed: bool = True) -> tuple:
    """Objective value breakdown and its gradient w.r.t. every (x, y, heading)."""
    if len(traj) != len(reference):
        raise ValueError(f"horizon mismatch: {len(traj)} vs {len(reference)}")
    model = CostModel(reference, density, heat, config, pin_initial_speed)
    states = traj.states[:, :3].copy()
    states[:, 2] = reference.headings + wrap_angle(traj.headings - reference.headings)
    breakdown, _, grad = model.evaluate(states)
    return breakdown, grad


def hard_violations(traj: Trajectory, config: SolverConfig, pin_initial_speed: bool = True) -> Dict[str, float]:
    """Largest violation per hard bound (0 when satisfied)."""
    tape = kinematics_forward(traj.x, traj.y, traj.headings, traj.dt,
                              float(traj.speeds[0]) if pin_initial_speed else None)
    c = config
    out = {
        "accel": max(float(np.max(tape.accel - c.a_max)), float(np.max(c.a_min - tape.accel)), 0.0),
        "jerk": max(float(np.max(np.abs(tape.jerk))) - c.j_max, 0.0),
        "curvature": max(float(np.max(np.abs(tape.curvature))) - c.kappa_max, 0.0),
        "lateral_accel": max(float(np.max(np.abs(tape.lateral_accel))) - c.lat_max, 0.0),
        "speed": max(float(np.max(tape.speed)) - c.v_max, 0.0),
        "slip": max(float(np.max(np.abs(tape.slip))) - c.slip_max, 0.0),
    }
    seg = segments_forward(traj.x, traj.y, traj.headings, traj.dt, c.kappa_max)
    out["segment_slip"] = max(float(np.max(np.abs(seg.slip))) - c.slip_max, 0.0)
    out["segment_turn"] = max(float(np.max(seg.turn)), 0.0)
    if len(seg.accel):
        out["segment_accel"] = max(float(np.max(seg.accel - c.a_max)), float(np.max(c.a_min - seg.accel)), 0.0)
    return out


def is_feasible(traj: Trajectory, config: SolverConfig, pin_initial_speed: bool = True) -> bool:
    return all(v <= config.feas_tol for v in hard_violations(traj, config, pin_initial_speed).values())


# ---------------------------------------------------------------------------


def _to_traj(ref: Trajectory, states: np.ndarray, v0: float) -> Trajectory:
    D_speed = np.hypot(np.gradient(states[:, 0], ref.dt, edge_order=1),
                       np.gradient(states[:, 1], ref.dt, edge_order=1))
    D_speed[0] = v0
    return Trajectory.from_arrays(ref.dt, states[:, 0], states[:, 1], states[:, 2], D_speed)


def _smooth_pass(states: np.ndarray) -> np.ndarray:
    """One local re-smoothing sweep over the free states (state 0 fixed)."""
    s = states.copy()
    inner = s[1:-1]
    s[1:-1] = 0.5 * inner + 0.25 * (s[:-2] + s[2:])
    s[-1] = s[-2] + 0.5 * ((s[-1] - s[-2]) + (s[-2] - s[-3]))
    return s


def refine(initial_plan: Trajectory, density: Optional[SpatialTemporalGrid],
           heat: Optional[SpatialTemporalGrid], config: SolverConfig) -> RefinementResult:
    """Refine ``initial_plan``; state 0 (the current ego state) is pinned."""
    model = CostModel(initial_plan, density, heat, config)
    T = len(initial_plan)
    v0 = float(initial_plan.speeds[0])
    init = initial_plan.states[:, :3].copy()
    init[:, 2] = np.unwrap(init[:, 2])
    fixed = init[0].copy()

    def unpack(z):
        s = np.empty((T, 3))
        s[0] = fixed
        s[1:] = z.reshape(T - 1, 3)
        return s

    last_valid = {"z": init[1:].ravel().copy()}

    def make_objective(mu):
        def f(z):
            s = unpack(z)
            b, pen, g = model.evaluate(s, mu)
            val = b.total + pen
            if not np.isfinite(val) or not np.all(np.isfinite(g)):
                raise SolverError("non-finite cost", _to_traj(initial_plan, unpack(last_valid["z"]), v0))
            last_valid["z"] = z.copy()
            return val, g[1:].ravel()
        return f

    init_breakdown, _, _ = model.evaluate(init)
    init_traj = _to_traj(initial_plan, init, v0)
    best = None  # (cost, states)
    if is_feasible(init_traj, config):
        best = (init_breakdown.total, init)

    z = init[1:].ravel().copy()
    iterations = 0
    converged = False
    last_states = init
    mu = config.penalty_mu0
    for _ in range(config.penalty_rounds):
        res = minimize(make_objective(mu), z, jac=True, method="L-BFGS-B",
                       options={"maxiter": config.max_iters, "ftol": config.tol, "gtol": 1e-8})
        iterations += int(res.nit)
        z = res.x
        last_states = unpack(z)
        if is_feasible(_to_traj(initial_plan, last_states, v0), config):
            b, _, _ = model.evaluate(last_states)
            if best is None or b.total < best[0]:
                best = (b.total, last_states)
            # later rounds only push further inside the bounds
            converged = bool(res.success)
            break
        mu *= config.penalty_growth

    projected = False
    if best is None:
        s = last_states
        for _ in range(config.projection_passes):
            s = _smooth_pass(s)
            if is_feasible(_to_traj(initial_plan, s, v0), config):
                b, _, _ = model.evaluate(s)
                best = (b.total, s)
                projected = True
                break

    states = best[1] if best is not None else last_states
    traj = initial_plan if states is init else _to_traj(initial_plan, states, v0)
    breakdown, _, _ = model.evaluate(states)
    feasible = best is not None
    if not feasible:
        logger.info("refinement found no feasible iterate")
    return RefinementResult(traj, breakdown, init_breakdown, iterations, converged and feasible, feasible,
                            hard_violations(traj, config), projected)
