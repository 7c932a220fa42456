"""Independent reference implementations used by the tests.

Each oracle avoids the code path it checks: kernel coverage comes from
shapely polygon areas instead of the package's clipper, convolution is an
explicit shift-and-add loop, and Gaussian terms are summed over every pixel.
"""

from __future__ import annotations

import math

import numpy as np
import shapely

from heatplan.geometry import Trajectory, polygon_from_box


def footprint_coverage(heading: float, length: float, width: float, res: float, K: int) -> np.ndarray:
    """K x K fraction of the footprint area falling in each pixel (grid axes)."""
    fp = shapely.Polygon(polygon_from_box(0.0, 0.0, heading, length, width))
    m = K // 2
    out = np.zeros((K, K))
    for dv in range(-m, m + 1):
        for du in range(-m, m + 1):
            sq = shapely.box((du - 0.5) * res, (dv - 0.5) * res, (du + 0.5) * res, (dv + 0.5) * res)
            out[dv + m, du + m] = fp.intersection(sq).area
    return out / fp.area


def brute_force_density(plane: np.ndarray, heading: float, length: float, width: float, res: float,
                        K: int) -> np.ndarray:
    """Fraction of the footprint posed at every pixel that overlaps occupied cells.

    Cells outside the grid count as occupied.
    """
    cover = footprint_coverage(heading, length, width, res, K)
    m = K // 2
    H, W = plane.shape
    padded = np.ones((H + 2 * m, W + 2 * m))
    padded[m:m + H, m:m + W] = plane
    out = np.zeros((H, W))
    for dv in range(-m, m + 1):
        for du in range(-m, m + 1):
            w = cover[dv + m, du + m]
            if w == 0.0:
                continue
            out += w * padded[m + dv:m + dv + H, m + du:m + du + W]
    return out


def gaussian_full_sum(xy, plane: np.ndarray, frame, sigma: float, threshold: float) -> float:
    """Sum of v * N(d; sigma) over every pixel with value > threshold."""
    total = 0.0
    H, W = plane.shape
    for v in range(H):
        for u in range(W):
            val = plane[v, u]
            if val > threshold:
                p = frame.grid_to_world([u, v])
                d2 = (xy[0] - p[0]) ** 2 + (xy[1] - p[1]) ** 2
                total += val * math.exp(-d2 / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
    return total


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def idm_rollout(v0: float, gap0: float, v_lead: float, v_des: float, s0: float, T: float, a: float, b: float,
                delta: float, dt: float, steps: int):
    """Scalar IDM follower behind a constant-speed leader; returns (gaps, speeds).

    Trapezoidal position update, stopping inside the step instead of
    reversing, and no step closes the gap below ``s0``.
    """
    v, gap = v0, gap0
    gaps, speeds = [gap], [v]
    for _ in range(steps):
        s_star = s0 + max(0.0, v * T + v * (v - v_lead) / (2 * math.sqrt(a * b)))
        acc = a * (1 - (v / v_des) ** delta - (s_star / gap) ** 2)
        v_new = v + acc * dt
        if v_new < 0:
            ds = v * v / (-2 * acc)
            v_new = 0.0
        else:
            ds = 0.5 * (v + v_new) * dt
        room = gap + max(v_lead, 0.0) * dt - s0
        if ds > room:
            ds = max(room, 0.0)
            v_new = min(v_new, ds / dt)
        gap += v_lead * dt - ds
        v = v_new
        gaps.append(gap)
        speeds.append(v)
    return np.array(gaps), np.array(speeds)


# ---------------------------------------------------------------------------
# lateral-bump grid search for obstacle avoidance


def bump_candidate(plan: Trajectory, amp: float, center: float, w_in: float, w_out: float) -> Trajectory:
    """``plan`` shifted sideways by an asymmetric raised-cosine bump.

    Headings and speeds are re-derived from the shifted positions so the
    candidate is path-consistent.
    """
    t = plan.times
    st = plan.states
    u = np.where(t < center, (t - center) / w_in, (t - center) / w_out)
    z = np.clip(u, -1.0, 1.0)
    n = amp * 0.5 * (1.0 + np.cos(np.pi * z))
    n[0] = 0.0
    x = st[:, 0] - n * np.sin(st[:, 2])
    y = st[:, 1] + n * np.cos(st[:, 2])
    return Trajectory.from_positions(plan.dt, np.column_stack([x, y]), heading0=st[0, 2], speed0=st[0, 3])


def bump_search(plan: Trajectory, score, t_obs: float):
    """Coarse grid over bump shapes and amplitudes, then a local grid around the best five.

    ``score`` maps a trajectory to its cost (inf when infeasible). Returns
    (best cost, best trajectory).
    """
    shapes = []
    for c in np.arange(t_obs - 1.0, t_obs + 1.01, 0.5):
        for wi in (1.5, 2.5, 3.5):
            for wo in (1.5, 2.5, 3.5):
                for amp in np.arange(-5.0, 5.01, 0.5):
                    shapes.append((score(bump_candidate(plan, amp, c, wi, wo)), amp, c, wi, wo))
    shapes.sort(key=lambda r: r[0])
    best = (math.inf, None)
    for _, a0, c0, wi0, wo0 in shapes[:5]:
        for c in (c0 - 0.25, c0, c0 + 0.25):
            for wi in (wi0 - 0.5, wi0, wi0 + 0.5):
                for wo in (wo0 - 0.5, wo0, wo0 + 0.5):
                    for amp in a0 + np.arange(-0.4, 0.41, 0.1):
                        tr = bump_candidate(plan, amp, c, wi, wo)
                        v = score(tr)
                        if v < best[0]:
                            best = (v, tr)
    return best


def footprint_clearance(traj: Trajectory, obstacle, length: float = 4.0, width: float = 2.0,
                        substeps: int = 10) -> float:
    """Smallest footprint-to-obstacle distance along the linearly densified path."""
    n = len(traj)
    f = np.linspace(0.0, n - 1, substeps * (n - 1) + 1)
    idx = np.arange(n)
    st = np.stack([np.interp(f, idx, traj.states[:, i]) for i in range(3)], axis=1)
    return min(obstacle.distance(shapely.Polygon(polygon_from_box(x, y, h, length, width))) for x, y, h in st)
