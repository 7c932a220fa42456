"""Poses, trajectories, grid frames and finite-difference kinematics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

# Below this speed curvature is taken from the heading rate over EPS_V.
EPS_V = 0.1
# Smoothing inside the speed norm keeps its gradient bounded at standstill.
_SPEED_EPS = 1e-6


def wrap_angle(a):
    """Map angles to (-pi, pi]. Works on scalars and arrays."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2.0 * math.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError(f"non-finite pose {self.x}, {self.y}, {self.heading}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_local(self, points) -> np.ndarray:
        """Express world points in this pose's frame (x forward, y left)."""
        pts = np.asarray(points, dtype=float) - self.xy
        return pts @ rotation(self.heading)

    def to_world(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ rotation(self.heading).T + self.xy

    def compose(self, dx: float, dy: float, dheading: float) -> "Pose2":
        """Apply an offset given in this pose's own frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return Pose2(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.heading + dheading)


class Trajectory:
    """Fixed-step sequence of (x, y, heading, speed) states.

    State ``k`` is at time ``k * dt``; state 0 is the current state.
    The backing array is read-only.
    """

    __slots__ = ("dt", "_states")

    def __init__(self, dt: float, states):
        arr = np.array(states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"trajectory states must be (T, 4), got {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 states")
        if not (dt > 0 and math.isfinite(dt)):
            raise ValueError(f"dt must be positive, got {dt}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("trajectory contains non-finite values")
        arr[:, 2] = wrap_angle(arr[:, 2])
        arr.setflags(write=False)
        self.dt = float(dt)
        self._states = arr

    @classmethod
    def from_arrays(cls, dt, x, y, heading, speed) -> "Trajectory":
        return cls(dt, np.column_stack([x, y, heading, speed]))

    @classmethod
    def from_positions(cls, dt: float, xy, heading0: Optional[float] = None,
                       speed0: Optional[float] = None) -> "Trajectory":
        """Build a trajectory whose headings and speeds follow the path."""
        xy = np.asarray(xy, dtype=float)
        vx, vy = _velocity(xy[:, 0], xy[:, 1], dt)
        speed = np.hypot(vx, vy)
        heading = np.arctan2(vy, vx)
        # hold the heading through standstill instead of atan2(0, 0)
        for k in range(len(heading)):
            if speed[k] < 1e-3:
                heading[k] = heading[k - 1] if k > 0 else (heading0 if heading0 is not None else 0.0)
        if heading0 is not None:
            heading[0] = heading0
        if speed0 is not None:
            speed[0] = speed0
        return cls.from_arrays(dt, xy[:, 0], xy[:, 1], heading, speed)

    @property
    def states(self) -> np.ndarray:
        return self._states

    def __len__(self) -> int:
        return self._states.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self._states[:, :2]

    @property
    def x(self) -> np.ndarray:
        return self._states[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self._states[:, 1]

    @property
    def headings(self) -> np.ndarray:
        return self._states[:, 2]

    @property
    def speeds(self) -> np.ndarray:
        return self._states[:, 3]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def pose(self, k: int) -> Pose2:
        x, y, h, _ = self._states[k]
        return Pose2(x, y, h)

    def poses(self) -> list:
        return [self.pose(k) for k in range(len(self))]

    def replace_state(self, k: int, state) -> "Trajectory":
        arr = self._states.copy()
        arr[k] = state
        return Trajectory(self.dt, arr)

    def state_at(self, t: float) -> np.ndarray:
        """Linearly interpolated state at time ``t`` (clamped to the span)."""
        t = min(max(t, 0.0), self.duration)
        f = t / self.dt
        k = min(int(math.floor(f)), len(self) - 2)
        w = f - k
        a, b = self._states[k], self._states[k + 1]
        out = a + w * (b - a)
        out[2] = a[2] + w * wrap_angle(b[2] - a[2])
        out[2] = wrap_angle(out[2])
        return out

    def resample(self, t0: float, n: int, dt: Optional[float] = None) -> "Trajectory":
        """``n`` states starting at ``t0`` with step ``dt`` (default: own dt)."""
        dt = self.dt if dt is None else dt
        k0 = t0 / self.dt
        if dt == self.dt and abs(k0 - round(k0)) < 1e-9 and round(k0) + n <= len(self):
            k0 = int(round(k0))
            return Trajectory(dt, self._states[k0:k0 + n])
        return Trajectory(dt, [self.state_at(t0 + i * dt) for i in range(n)])

    def to_list(self) -> list:
        return self._states.tolist()

    def allclose(self, other: "Trajectory", atol: float = 1e-12) -> bool:
        return (abs(self.dt - other.dt) <= atol and len(self) == len(other)
                and bool(np.allclose(self._states, other._states, atol=atol, rtol=0)))

    def __repr__(self) -> str:
        return f"Trajectory(T={len(self)}, dt={self.dt})"


@dataclass(frozen=True)
class GridFrame:
    """Geo-reference of a raster.

    Pixel ``(u, v)`` (column, row) has its center at
    ``origin + R(orientation) @ (u * resolution, v * resolution)``.
    Plane arrays are indexed ``[row, col]`` = ``[v, u]``.
    """

    origin_x: float
    origin_y: float
    resolution: float
    width: int
    height: int
    orientation: float = 0.0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"grid dims must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def ego_centric(cls, pose: Pose2, width: int = 224, height: int = 224,
                    resolution: float = 0.5) -> "GridFrame":
        """Frame aligned with ``pose``; three quarters of the extent lies ahead."""
        ox = -width * resolution / 4.0 + resolution / 2.0
        oy = -height * resolution / 2.0 + resolution / 2.0
        wx, wy = pose.to_world([ox, oy])
        return cls(float(wx), float(wy), resolution, width, height, pose.heading)

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.origin_x, self.origin_y])

    def with_resolution(self, resolution: float) -> "GridFrame":
        """Frame covering the same extent at another resolution."""
        w = int(round(self.width * self.resolution / resolution))
        h = int(round(self.height * self.resolution / resolution))
        # shift from the old pixel-center origin to the shared outer corner and back
        corner = np.array([-self.resolution / 2.0, -self.resolution / 2.0])
        local = corner + resolution / 2.0
        wx, wy = self.origin + rotation(self.orientation) @ local
        return GridFrame(float(wx), float(wy), resolution, w, h, self.orientation)

    def world_to_grid(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        rel = pts - self.origin
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        u = (c * rel[..., 0] + s * rel[..., 1]) / self.resolution
        v = (-s * rel[..., 0] + c * rel[..., 1]) / self.resolution
        return np.stack([u, v], axis=-1)

    def grid_to_world(self, pixels) -> np.ndarray:
        px = np.asarray(pixels, dtype=float) * self.resolution
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        x = self.origin_x + c * px[..., 0] - s * px[..., 1]
        y = self.origin_y + s * px[..., 0] + c * px[..., 1]
        return np.stack([x, y], axis=-1)

    def in_bounds(self, pixels) -> np.ndarray:
        """True where fractional pixel coordinates fall on a pixel of the grid."""
        px = np.asarray(pixels, dtype=float)
        u, v = px[..., 0], px[..., 1]
        return (u > -0.5) & (u < self.width - 0.5) & (v > -0.5) & (v < self.height - 0.5)

    def pixel_centers(self) -> np.ndarray:
        """World coordinates of every pixel center, shape (H, W, 2)."""
        vv, uu = np.mgrid[0:self.height, 0:self.width]
        return self.grid_to_world(np.stack([uu, vv], axis=-1))

    def to_dict(self) -> dict:
        return {"origin": [self.origin_x, self.origin_y], "resolution": self.resolution,
                "width": self.width, "height": self.height, "orientation": self.orientation}

    @classmethod
    def from_dict(cls, d: dict) -> "GridFrame":
        return cls(d["origin"][0], d["origin"][1], d["resolution"], d["width"], d["height"],
                   d.get("orientation", 0.0))


def polygon_from_box(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise, shape (4, 2)."""
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ rotation(heading).T + np.array([x, y])


# ---------------------------------------------------------------------------
# finite-difference kinematics


@lru_cache(maxsize=64)
def diff_matrix(n: int, dt: float) -> np.ndarray:
    """First-derivative stencil: central inside, one-sided at the ends."""
    D = np.zeros((n, n))
    D[0, 0], D[0, 1] = -1.0, 1.0
    D[-1, -2], D[-1, -1] = -1.0, 1.0
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5, 0.5
    D /= dt
    D.setflags(write=False)
    return D


def _velocity(x, y, dt):
    D = diff_matrix(len(x), float(dt))
    return D @ x, D @ y


def unwrap_headings(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    steps = wrap_angle(np.diff(theta))
    return np.concatenate([[theta[0]], theta[0] + np.cumsum(steps)])


@dataclass
class KinematicsTape:
    """Forward intermediates kept for the reverse pass."""

    dt: float
    theta: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    speed: np.ndarray
    speed_pinned: bool
    accel: np.ndarray
    jerk: np.ndarray
    yaw_rate: np.ndarray
    curvature: np.ndarray
    curvature_rate: np.ndarray
    lateral_accel: np.ndarray
    slip: np.ndarray
    denom: np.ndarray


def kinematics_forward(x, y, theta, dt: float, initial_speed: Optional[float] = None,
                       eps_v: float = EPS_V) -> KinematicsTape:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    D = diff_matrix(len(x), float(dt))
    vx, vy = D @ x, D @ y
    speed = np.sqrt(vx * vx + vy * vy + _SPEED_EPS * _SPEED_EPS)
    if initial_speed is not None:
        speed[0] = initial_speed
    accel = D @ speed
    jerk = D @ accel
    yaw_rate = D @ unwrap_headings(theta)
    denom = np.maximum(speed, eps_v)
    curvature = yaw_rate / denom
    curvature_rate = D @ curvature
    lateral_accel = speed * speed * curvature
    slip = -np.sin(theta) * vx + np.cos(theta) * vy
    return KinematicsTape(float(dt), theta, vx, vy, speed, initial_speed is not None, accel, jerk,
                          yaw_rate, curvature, curvature_rate, lateral_accel, slip, denom)


def kinematics_backward(tape: KinematicsTape, g_accel=None, g_jerk=None, g_curvature=None,
                        g_curvature_rate=None, g_lateral_accel=None, g_slip=None, g_speed=None):
    """Pull cotangents of the kinematic outputs back to (x, y, theta)."""
    n = len(tape.speed)
    D = diff_matrix(n, tape.dt)
    zero = np.zeros(n)
    g_accel = zero.copy() if g_accel is None else np.array(g_accel, dtype=float)
    g_speed = zero.copy() if g_speed is None else np.array(g_speed, dtype=float)
    g_kappa = zero.copy() if g_curvature is None else np.array(g_curvature, dtype=float)
    g_slip = zero if g_slip is None else np.asarray(g_slip, dtype=float)

    if g_jerk is not None:
        g_accel += D.T @ g_jerk
    if g_curvature_rate is not None:
        g_kappa += D.T @ g_curvature_rate
    if g_lateral_accel is not None:
        g_lateral_accel = np.asarray(g_lateral_accel, dtype=float)
        g_speed += g_lateral_accel * 2.0 * tape.speed * tape.curvature
        g_kappa += g_lateral_accel * tape.speed * tape.speed
    g_speed += D.T @ g_accel

    g_yaw = g_kappa / tape.denom
    g_denom = -g_kappa * tape.yaw_rate / (tape.denom * tape.denom)
    g_speed += np.where(tape.speed >= tape.denom, g_denom, 0.0)
    if tape.speed_pinned:
        g_speed[0] = 0.0

    s, c = np.sin(tape.theta), np.cos(tape.theta)
    # a pinned zero initial speed would divide by zero; that entry is overwritten below
    safe = np.where(tape.speed > 0, tape.speed, 1.0)
    g_vx = g_speed * tape.vx / safe - g_slip * s
    g_vy = g_speed * tape.vy / safe + g_slip * c
    if tape.speed_pinned:
        g_vx[0] = -g_slip[0] * s[0]
        g_vy[0] = g_slip[0] * c[0]
    g_theta = D.T @ g_yaw + g_slip * (-c * tape.vx - s * tape.vy)
    return D.T @ g_vx, D.T @ g_vy, g_theta


@dataclass
class Kinematics:
    speed: np.ndarray
    accel: np.ndarray
    jerk: np.ndarray
    curvature: np.ndarray
    curvature_rate: np.ndarray
    lateral_accel: np.ndarray
    yaw_rate: np.ndarray
    slip: np.ndarray
    steering: np.ndarray


def trajectory_kinematics(traj: Trajectory, wheelbase: float = 2.7,
                          pin_initial_speed: bool = False) -> Kinematics:
    """Per-step acceleration, jerk, curvature, curvature rate and lateral acceleration.

    Speeds come from finite differences of the positions. With
    ``pin_initial_speed`` the stored speed of state 0 is used instead, which
    is how the solver anchors a plan to the measured ego speed.
    """
    if len(traj) < 4:
        raise ValueError("need at least 4 states for finite-difference jerk")
    tape = kinematics_forward(traj.x, traj.y, traj.headings, traj.dt,
                              float(traj.speeds[0]) if pin_initial_speed else None)
    return Kinematics(speed=tape.speed, accel=tape.accel, jerk=tape.jerk, curvature=tape.curvature,
                      curvature_rate=tape.curvature_rate, lateral_accel=tape.lateral_accel,
                      yaw_rate=tape.yaw_rate, slip=tape.slip,
                      steering=np.arctan(wheelbase * tape.curvature))


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def project_on_polyline(points, polyline) -> tuple:
    """Arc length and signed lateral offset of each point w.r.t. a polyline.

    Returns (s, lateral, tangent_heading) arrays.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    line = np.asarray(polyline, dtype=float)
    a, b = line[:-1], line[1:]
    seg = b - a
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    seg_len = np.where(seg_len > 0, seg_len, 1e-12)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nsk,sk->ns", rel, seg) / seg_len ** 2, 0.0, 1.0)
    closest = a[None] + t[..., None] * seg[None]
    d2 = np.sum((pts[:, None, :] - closest) ** 2, axis=-1)
    best = np.argmin(d2, axis=1)
    idx = np.arange(len(pts))
    s = cum[best] + t[idx, best] * seg_len[best]
    tang = seg[best] / seg_len[best, None]
    r = rel[idx, best]
    lateral = tang[:, 0] * r[:, 1] - tang[:, 1] * r[:, 0]
    return s, lateral, np.arctan2(tang[:, 1], tang[:, 0])


def interpolate_polyline(polyline, s) -> tuple:
    """Point and tangent heading at arc length ``s`` (extrapolates linearly)."""
    line = np.asarray(polyline, dtype=float)
    seg = np.diff(line, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.atleast_1d(np.asarray(s, dtype=float))
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    w = (s - cum[k]) / np.where(seg_len[k] > 0, seg_len[k], 1.0)
    pts = line[k] + w[:, None] * seg[k]
    return pts, np.arctan2(seg[k, 1], seg[k, 0])


def as_points(seq: Iterable[Sequence[float]]) -> np.ndarray:
    return np.asarray(list(seq), dtype=float).reshape(-1, 2)
