"""Six-channel input raster, heatmap/occupancy targets and the binary grid format.

Binary grid layout (little endian)::

    8 bytes   magic b"HPGRID01"
    3 x int32 T, H, W
    4 x f64   origin_x, origin_y, resolution, orientation
    T*H*W     float32 values, row-major per timestep
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import shapely

from .geometry import GridFrame, Pose2, Trajectory, polygon_from_box
from .scenario import AgentTrack, Scenario

logger = logging.getLogger(__name__)

CHANNELS = ("ego", "roadmap", "baseline", "agents", "route", "speed")
MAGIC = b"HPGRID01"
_HEADER = struct.Struct("<3i4d")


@dataclass(frozen=True, eq=False)
class SpatialTemporalGrid:
    """T planes of values in [0, 1] over one ``GridFrame``."""

    frame: GridFrame
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != self.frame.shape:
            raise ValueError(f"values shape {v.shape} does not match frame {self.frame.shape}")
        if v.size and (np.nanmin(v) < 0.0 or np.nanmax(v) > 1.0 or np.isnan(v).any()):
            raise ValueError("grid values must lie in [0, 1]")
        v = v.copy() if v is self.values else v
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def timesteps(self) -> int:
        return self.values.shape[0]

    def plane(self, t: int) -> np.ndarray:
        return self.values[t]

    @property
    def empty_steps(self) -> tuple:
        """Indices of all-zero planes (e.g. targets clipped by the frame)."""
        return tuple(int(t) for t in np.flatnonzero(~self.values.reshape(self.timesteps, -1).any(axis=1)))

    def sample(self, t: int, xy) -> np.ndarray:
        """Bilinear lookup of plane ``t`` at world points; outside reads as 1."""
        return bilinear(self.values[t], self.frame, xy, outside=1.0)


@dataclass(frozen=True, eq=False)
class RasterStack:
    frame: GridFrame
    channels: Dict[str, np.ndarray]

    def __post_init__(self):
        if tuple(self.channels) != CHANNELS:
            raise ValueError(f"raster needs exactly the channels {CHANNELS}")

    def as_array(self) -> np.ndarray:
        return np.stack([self.channels[c] for c in CHANNELS])


def bilinear(plane: np.ndarray, frame: GridFrame, xy, outside: float = 0.0) -> np.ndarray:
    uv = frame.world_to_grid(np.atleast_2d(np.asarray(xy, dtype=float)))
    h, w = plane.shape
    padded = np.pad(plane, 1, constant_values=outside)
    u = np.clip(uv[:, 0] + 1.0, 0.0, w + 1.0)
    v = np.clip(uv[:, 1] + 1.0, 0.0, h + 1.0)
    u0 = np.minimum(np.floor(u).astype(int), w)
    v0 = np.minimum(np.floor(v).astype(int), h)
    fu, fv = u - u0, v - v0
    out = (padded[v0, u0] * (1 - fu) * (1 - fv) + padded[v0, u0 + 1] * fu * (1 - fv)
           + padded[v0 + 1, u0] * (1 - fu) * fv + padded[v0 + 1, u0 + 1] * fu * fv)
    far = (uv[:, 0] < -1) | (uv[:, 1] < -1) | (uv[:, 0] > w) | (uv[:, 1] > h)
    return np.where(far, outside, out)


# ---------------------------------------------------------------------------
# primitive fills (pixel-center tests, boundary inclusive)


def box_mask(frame: GridFrame, x: float, y: float, heading: float, length: float,
             width: float) -> np.ndarray:
    """Pixels whose centers lie inside an oriented rectangle."""
    mask = np.zeros(frame.shape, dtype=bool)
    corners = frame.world_to_grid(polygon_from_box(x, y, heading, length, width))
    u0 = max(int(math.floor(corners[:, 0].min())), 0)
    u1 = min(int(math.ceil(corners[:, 0].max())), frame.width - 1)
    v0 = max(int(math.floor(corners[:, 1].min())), 0)
    v1 = min(int(math.ceil(corners[:, 1].max())), frame.height - 1)
    if u0 > u1 or v0 > v1:
        return mask
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    cu, cv = frame.world_to_grid([x, y])
    rel_u, rel_v = uu - cu, vv - cv
    a = heading - frame.orientation
    c, s = math.cos(a), math.sin(a)
    lon = (c * rel_u + s * rel_v) * frame.resolution
    lat = (-s * rel_u + c * rel_v) * frame.resolution
    tol = 1e-9
    mask[v0:v1 + 1, u0:u1 + 1] = (np.abs(lon) <= length / 2 + tol) & (np.abs(lat) <= width / 2 + tol)
    return mask


def polygon_mask(frame: GridFrame, polygons: Iterable[np.ndarray]) -> np.ndarray:
    """Union of polygons rasterized at pixel centers."""
    mask = np.zeros(frame.shape, dtype=bool)
    for poly in polygons:
        uv = frame.world_to_grid(np.asarray(poly, dtype=float))
        u0 = max(int(math.floor(uv[:, 0].min())), 0)
        u1 = min(int(math.ceil(uv[:, 0].max())), frame.width - 1)
        v0 = max(int(math.floor(uv[:, 1].min())), 0)
        v1 = min(int(math.ceil(uv[:, 1].max())), frame.height - 1)
        if u0 > u1 or v0 > v1:
            continue
        geom = shapely.Polygon(uv)
        shapely.prepare(geom)
        vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
        mask[v0:v1 + 1, u0:u1 + 1] |= shapely.intersects_xy(geom, uu.astype(float), vv.astype(float))
    return mask


def polyline_mask(frame: GridFrame, polyline) -> np.ndarray:
    """1-pixel-wide rasterization: every pixel a densely sampled point falls in."""
    mask = np.zeros(frame.shape, dtype=bool)
    uv = frame.world_to_grid(np.asarray(polyline, dtype=float))
    for a, b in zip(uv[:-1], uv[1:]):
        n = max(int(math.ceil(np.hypot(*(b - a)) * 4)), 1)
        pts = a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a)
        iu = np.rint(pts[:, 0]).astype(int)
        iv = np.rint(pts[:, 1]).astype(int)
        ok = (iu >= 0) & (iu < frame.width) & (iv >= 0) & (iv < frame.height)
        mask[iv[ok], iu[ok]] = True
    return mask


def corridor_mask(frame: GridFrame, polyline, half_width: float) -> np.ndarray:
    """Pixels whose centers lie within ``half_width`` meters of a polyline."""
    uv = frame.world_to_grid(np.asarray(polyline, dtype=float))
    r = half_width / frame.resolution
    u0 = max(int(math.floor(uv[:, 0].min() - r)), 0)
    u1 = min(int(math.ceil(uv[:, 0].max() + r)), frame.width - 1)
    v0 = max(int(math.floor(uv[:, 1].min() - r)), 0)
    v1 = min(int(math.ceil(uv[:, 1].max() + r)), frame.height - 1)
    mask = np.zeros(frame.shape, dtype=bool)
    if u0 > u1 or v0 > v1:
        return mask
    line = shapely.LineString(uv)
    shapely.prepare(line)
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    pts = shapely.points(uu.ravel().astype(float), vv.ravel().astype(float))
    mask[v0:v1 + 1, u0:u1 + 1] = shapely.dwithin(line, pts, r).reshape(uu.shape)
    return mask


# ---------------------------------------------------------------------------


def rasterize(s: Scenario, frame: GridFrame, ego_size: Sequence[float] = (4.0, 2.0),
              v_max: float = 20.0) -> RasterStack:
    """Six-channel bird's-eye raster of a scenario at t = 0."""
    ego = box_mask(frame, s.ego_pose.x, s.ego_pose.y, s.ego_pose.heading, *ego_size).astype(float)
    roadmap = polygon_mask(frame, s.map.drivable_area).astype(float)

    baseline = np.zeros(frame.shape, dtype=bool)
    for b in s.map.baselines.values():
        baseline |= polyline_mask(frame, b.points)

    agents = np.zeros(frame.shape)
    for a in s.agents:
        hist = a.history
        t_old = hist[0, 0]
        for row in hist:
            # 1.0 for the latest sample, fading to 0.2 for the oldest
            w = 1.0 if len(hist) == 1 or t_old == hist[-1, 0] else \
                0.2 + 0.8 * (row[0] - t_old) / (hist[-1, 0] - t_old)
            m = box_mask(frame, row[1], row[2], row[3], a.length, a.width)
            agents[m] = np.maximum(agents[m], w)

    route = np.zeros(frame.shape, dtype=bool)
    for rid in s.map.route:
        b = s.map.baselines[rid]
        route |= corridor_mask(frame, b.points, b.lane_width / 2)

    speed = np.full(frame.shape, min(max(s.ego_speed / v_max, 0.0), 1.0))
    channels = {"ego": ego, "roadmap": roadmap, "baseline": baseline.astype(float), "agents": agents,
                "route": route.astype(float), "speed": speed}
    return RasterStack(frame, channels)


def render_heatmap_target(expert: Trajectory, fine_frame: GridFrame, sigma_px: float = 4.0,
                          steps: Optional[int] = None) -> SpatialTemporalGrid:
    """Gaussian blob per timestep, peak exactly 1 at the pixel nearest the expert.

    Timesteps whose expert position falls outside the frame are all-zero and
    listed in ``empty_steps``.
    """
    n = len(expert) if steps is None else steps
    h, w = fine_frame.shape
    out = np.zeros((n, h, w))
    uv = fine_frame.world_to_grid(expert.xy[:n])
    cols, rows = np.arange(w), np.arange(h)
    clipped = []
    for t in range(n):
        u, v = np.rint(uv[t]).astype(int)
        if not (0 <= u < w and 0 <= v < h):
            clipped.append(t)
            continue
        gu = np.exp(-((cols - u) ** 2) / (2.0 * sigma_px ** 2))
        gv = np.exp(-((rows - v) ** 2) / (2.0 * sigma_px ** 2))
        out[t] = np.outer(gv, gu)
    if clipped:
        logger.warning("heatmap target clipped at timesteps %s", clipped)
    return SpatialTemporalGrid(fine_frame, out)


def render_occupancy_target(agents: Sequence[AgentTrack], frame: GridFrame, T: int,
                            dt: float) -> SpatialTemporalGrid:
    """Hard {0, 1} occupancy of agent footprints at t = k * dt, k < T."""
    out = np.zeros((T,) + frame.shape)
    for k in range(T):
        for a in agents:
            st = a.state_at(k * dt)
            if st is None:
                continue
            out[k][box_mask(frame, st[0], st[1], st[2], a.length, a.width)] = 1.0
    return SpatialTemporalGrid(frame, out)


# ---------------------------------------------------------------------------
# binary grid format


def grid_to_bytes(grid: SpatialTemporalGrid) -> bytes:
    f = grid.frame
    t, h, w = grid.values.shape
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_HEADER.pack(t, h, w, f.origin_x, f.origin_y, f.resolution, f.orientation))
    buf.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
    return buf.getvalue()


def grid_from_bytes(data: bytes) -> SpatialTemporalGrid:
    if data[:8] != MAGIC:
        raise ValueError("not a heatplan grid file (bad magic)")
    t, h, w, ox, oy, res, ori = _HEADER.unpack_from(data, 8)
    offset = 8 + _HEADER.size
    expected = offset + 4 * t * h * w
    if len(data) != expected:
        raise ValueError(f"grid file size {len(data)} != expected {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=offset).reshape(t, h, w).astype(float)
    return SpatialTemporalGrid(GridFrame(ox, oy, res, w, h, ori), np.clip(values, 0.0, 1.0))


def write_grid(grid: SpatialTemporalGrid, path) -> None:
    with open(path, "wb") as f:
        f.write(grid_to_bytes(grid))


def read_grid(path) -> SpatialTemporalGrid:
    with open(path, "rb") as f:
        return grid_from_bytes(f.read())


def default_frames(pose: Pose2, width: int = 224, height: int = 224, resolution: float = 0.5,
                   fine_resolution: float = 0.25):
    """Coarse input/occupancy frame and the matching fine heatmap frame."""
    coarse = GridFrame.ego_centric(pose, width, height, resolution)
    return coarse, coarse.with_resolution(fine_resolution)
