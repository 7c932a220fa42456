"""Random planning instances shared by the solver tests."""

import numpy as np

from heatplan.geometry import GridFrame, Trajectory
from heatplan.raster import SpatialTemporalGrid

T = 16
DT = 0.5

# one "PASS/FAIL" line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def smooth_plan(rng, v0=None) -> Trajectory:
    """A gently curving path at 4-10 m/s, consistent headings and speeds."""
    v0 = rng.uniform(4.0, 10.0) if v0 is None else v0
    t = np.arange(T) * DT
    kappa = rng.uniform(-0.03, 0.03)
    acc = rng.uniform(-0.5, 0.5)
    s = v0 * t + 0.5 * acc * t * t
    heading = rng.uniform(-np.pi, np.pi) + kappa * s
    x0, y0 = rng.uniform(-5, 5, 2)
    # integrate the heading along arc length with a fine step
    ss = np.linspace(0, s[-1], 4000)
    hh = heading[0] + kappa * ss
    xs = x0 + np.concatenate([[0], np.cumsum(np.cos(hh[:-1]) * np.diff(ss))])
    ys = y0 + np.concatenate([[0], np.cumsum(np.sin(hh[:-1]) * np.diff(ss))])
    return Trajectory.from_arrays(DT, np.interp(s, ss, xs), np.interp(s, ss, ys), heading, v0 + acc * t)


def plan_frame(plan: Trajectory, resolution=0.5, size=160) -> GridFrame:
    c = plan.xy.mean(axis=0)
    half = (size - 1) * resolution / 2
    return GridFrame(c[0] - half, c[1] - half, resolution, size, size)


def sparse_grid(rng, frame: GridFrame, fill=0.02) -> SpatialTemporalGrid:
    vals = rng.random((T,) + frame.shape) * (rng.random((T,) + frame.shape) < fill)
    return SpatialTemporalGrid(frame, vals)


def perturbed(rng, plan: Trajectory, scale=0.5) -> Trajectory:
    st = plan.states.copy()
    st[1:, :2] += rng.normal(0, scale, (T - 1, 2))
    st[1:, 2] += rng.normal(0, 0.05, T - 1)
    return Trajectory(plan.dt, st)
