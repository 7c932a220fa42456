"""Non-drivable map and the footprint-overlap collision density.

The density at pixel ``p`` is the mean non-drivable value under the ego
footprint centered at ``p``::

    density_t[v, u] = sum_k W_t[k] * nd_t[(v, u) + k]

with ``W_t`` the area-coverage raster of the ego rectangle at the planned
heading of step ``t``, normalized to sum 1. Reads outside the grid count as 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import GridFrame, Trajectory, wrap_angle
from .raster import SpatialTemporalGrid, polygon_mask

DEFAULT_WINDOW = 32


@dataclass(frozen=True, eq=False)
class NonDrivableMap(SpatialTemporalGrid):
    pass


@dataclass(frozen=True, eq=False)
class CollisionDensityMap(SpatialTemporalGrid):
    # pixel radius of the evaluated window, None for full planes
    window: Optional[int] = None


def merge_non_drivable(agent_planes, static_mask, drivable_mask) -> np.ndarray:
    """max(agent, static, 1 - drivable) per plane; OR on {0,1} inputs."""
    agent = np.asarray(agent_planes, dtype=float)
    fixed = np.maximum(np.asarray(static_mask, dtype=float), 1.0 - np.asarray(drivable_mask, dtype=float))
    if fixed.shape != agent.shape[1:]:
        raise ValueError(f"mask shape {fixed.shape} does not match planes {agent.shape[1:]}")
    return np.maximum(agent, fixed[None])


def build_non_drivable(agent_occ: SpatialTemporalGrid, static_objects: Sequence, drivable_area,
                       frame: GridFrame) -> NonDrivableMap:
    """Merge predicted agent occupancy with static obstacles and off-road area.

    ``static_objects`` and ``drivable_area`` are polygon lists or {0, 1}
    masks of the frame's shape. ``drivable_area=None`` means the whole frame
    is drivable.
    """
    if agent_occ.frame != frame:
        raise ValueError("agent occupancy frame differs from the target frame")
    static = _as_mask(frame, static_objects)
    drivable = np.ones(frame.shape, dtype=bool) if drivable_area is None else _as_mask(frame, drivable_area)
    return NonDrivableMap(frame, merge_non_drivable(agent_occ.values, static, drivable))


def _as_mask(frame: GridFrame, geoms) -> np.ndarray:
    if isinstance(geoms, np.ndarray) and geoms.shape == frame.shape:
        if not np.all((geoms == 0) | (geoms == 1)):
            raise ValueError("raster masks must hold only 0 and 1")
        return geoms.astype(bool)
    return polygon_mask(frame, geoms)


# ---------------------------------------------------------------------------
# ego kernel


def _clip(poly: list, axis: int, bound: float, keep_below: bool) -> list:
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ina = a[axis] <= bound if keep_below else a[axis] >= bound
        inb = b[axis] <= bound if keep_below else b[axis] >= bound
        if ina:
            out.append(a)
        if ina != inb:
            r = (bound - a[axis]) / (b[axis] - a[axis])
            out.append((a[0] + r * (b[0] - a[0]), a[1] + r * (b[1] - a[1])))
    return out


def _area(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def box_coverage(corners: np.ndarray, u0: float, u1: float, v0: float, v1: float) -> float:
    """Area of a convex polygon inside an axis-aligned box."""
    poly = [tuple(p) for p in corners]
    for axis, bound, below in ((0, u0, False), (0, u1, True), (1, v0, False), (1, v1, True)):
        poly = _clip(poly, axis, bound, below)
        if not poly:
            return 0.0
    return _area(poly)


def kernel_size(length: float, width: float, resolution: float) -> int:
    """Smallest odd K with K * resolution >= footprint diagonal."""
    k = int(math.ceil(math.hypot(length, width) / resolution - 1e-9))
    return k if k % 2 else k + 1


@dataclass(frozen=True, eq=False)
class EgoKernel:
    heading: float
    length: float
    width: float
    resolution: float
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@lru_cache(maxsize=4096)
def _kernel_weights(heading: float, length: float, width: float, resolution: float) -> np.ndarray:
    k = kernel_size(length, width, resolution)
    c = k // 2
    hl, hw = length / (2 * resolution), width / (2 * resolution)
    cs, sn = math.cos(heading), math.sin(heading)
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    corners = local @ np.array([[cs, -sn], [sn, cs]]).T
    w = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            du, dv = j - c, i - c
            w[i, j] = box_coverage(corners, du - 0.5, du + 0.5, dv - 0.5, dv + 0.5)
    w /= w.sum()
    w.setflags(write=False)
    return w


def build_ego_kernel(heading: float, footprint=(4.0, 2.0), resolution: float = 0.5) -> EgoKernel:
    """Area-coverage raster of the ego rectangle, normalized to sum 1.

    ``heading`` is measured in the grid's (u, v) axes, i.e. world heading minus
    the frame orientation.
    """
    length, width = footprint
    if length <= 0 or width <= 0 or resolution <= 0:
        raise ValueError("footprint and resolution must be positive")
    h = float(wrap_angle(heading))
    return EgoKernel(h, float(length), float(width), float(resolution),
                     _kernel_weights(h, float(length), float(width), float(resolution)))


def plan_kernels(plan: Trajectory, frame: GridFrame, footprint=(4.0, 2.0)) -> list:
    """One kernel per planned state, oriented by the plan's headings."""
    return [build_ego_kernel(h - frame.orientation, footprint, frame.resolution) for h in plan.headings]


# ---------------------------------------------------------------------------


def _correlate(plane: np.ndarray, w: np.ndarray) -> np.ndarray:
    return ndimage.correlate(plane, w, mode="constant", cval=1.0)


def collision_density(nd: SpatialTemporalGrid, kernels: Sequence[EgoKernel],
                      centers=None, window: Optional[int] = None) -> CollisionDensityMap:
    """Footprint-overlap density per plane.

    With ``window`` set, only pixels within that Chebyshev radius of each
    plane's center (world points, usually the initial plan positions) are
    evaluated; everything else reads 1.
    """
    T = nd.timesteps
    if len(kernels) != T:
        raise ValueError(f"{len(kernels)} kernels for {T} planes")
    if window is not None and (centers is None or len(centers) != T):
        raise ValueError("windowed mode needs one center per plane")
    frame = nd.frame
    out = np.ones(nd.values.shape) if window is not None else np.empty(nd.values.shape)
    for t, ker in enumerate(kernels):
        if not math.isclose(ker.resolution, frame.resolution):
            raise ValueError("kernel resolution differs from grid resolution")
        plane = nd.values[t]
        if window is None:
            out[t] = _correlate(plane, ker.weights)
            continue
        cu, cv = np.rint(frame.world_to_grid(np.asarray(centers[t], dtype=float)[:2])).astype(int)
        u0, u1 = max(cu - window, 0), min(cu + window, frame.width - 1)
        v0, v1 = max(cv - window, 0), min(cv + window, frame.height - 1)
        if u0 > u1 or v0 > v1:
            continue
        m = ker.size // 2
        # slice with a kernel margin so the window sees true neighbours
        a0, a1 = max(u0 - m, 0), min(u1 + m, frame.width - 1)
        b0, b1 = max(v0 - m, 0), min(v1 + m, frame.height - 1)
        sub = _correlate(plane[b0:b1 + 1, a0:a1 + 1], ker.weights)
        out[t, v0:v1 + 1, u0:u1 + 1] = sub[v0 - b0:v1 - b0 + 1, u0 - a0:u1 - a0 + 1]
    np.clip(out, 0.0, 1.0, out=out)
    return CollisionDensityMap(frame, out, window)


def window_mask(frame: GridFrame, centers, window: int) -> np.ndarray:
    """(T, H, W) mask of the pixels a windowed density evaluates."""
    cu, cv = np.rint(frame.world_to_grid(np.asarray(centers, dtype=float)[:, :2])).astype(int).T
    vv, uu = np.mgrid[0:frame.height, 0:frame.width]
    return ((np.abs(uu[None] - cu[:, None, None]) <= window)
            & (np.abs(vv[None] - cv[:, None, None]) <= window))


def density_for_plan(nd: SpatialTemporalGrid, plan: Trajectory, footprint=(4.0, 2.0),
                     window: Optional[int] = DEFAULT_WINDOW) -> CollisionDensityMap:
    """Density with kernels and windows taken from the initial plan."""
    if len(plan) != nd.timesteps:
        raise ValueError("plan length differs from the number of planes")
    return collision_density(nd, plan_kernels(plan, nd.frame, footprint), plan.xy, window)
