"""Training losses as pure functions (no training loop)."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Trajectory, wrap_angle

EPS = 1e-6


@dataclass(frozen=True)
class LossConfig:
    alpha: float = -1.0
    gamma_f: float = 2.0
    beta_f: float = 4.0
    lambda_imi: float = 1.0
    lambda_hm: float = 1.0
    lambda_occ: float = 100.0

    def __post_init__(self):
        if self.alpha == 0:
            raise ValueError("alpha must be non-zero")
        if not (self.gamma_f > 0 and self.beta_f > 0):
            raise ValueError("focal exponents must be positive")
        if min(self.lambda_imi, self.lambda_hm, self.lambda_occ) < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown loss config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def time_weights(T: int, alpha: float) -> np.ndarray:
    """exp(t / (alpha * T)) for t = 1..T."""
    t = np.arange(1, T + 1, dtype=float)
    return np.exp(t / (alpha * T))


def _as_xyh(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.states[:, :3]
    arr = np.asarray(traj, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 3:
        raise ValueError(f"expected (T, 3) states, got {arr.shape}")
    return arr[:, :3]


def imitation_loss(pred, target, config: LossConfig = LossConfig()) -> float:
    """Time-weighted L1 distance between two (x, y, heading) sequences."""
    a, b = _as_xyh(pred), _as_xyh(target)
    if a.shape != b.shape:
        raise ValueError(f"horizon mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = np.abs(a - b)
    diff[:, 2] = np.abs(wrap_angle(a[:, 2] - b[:, 2]))
    return float(np.dot(time_weights(a.shape[0], config.alpha), diff.sum(axis=1)))


def heatmap_focal_loss(pred, target, config: LossConfig = LossConfig()) -> float:
    """Penalty-reduced focal loss, normalized by the number of positive pixels."""
    p = np.clip(np.asarray(getattr(pred, "values", pred), dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(getattr(target, "values", target), dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    pos = y == 1.0
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("heatmap target has no positive pixels")
    g, b = config.gamma_f, config.beta_f
    pos_loss = -((1.0 - p[pos]) ** g * np.log(p[pos])).sum()
    neg = ~pos
    neg_loss = -((1.0 - y[neg]) ** b * p[neg] ** g * np.log(1.0 - p[neg])).sum()
    return float((pos_loss + neg_loss) / n_pos)


def occupancy_bce(pred, target) -> float:
    """Mean binary cross-entropy over all pixels and timesteps."""
    p = np.clip(np.asarray(getattr(pred, "values", pred), dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(getattr(target, "values", target), dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def total_loss(parts, config: LossConfig = LossConfig()) -> float:
    """Weighted sum of (imitation, heatmap, occupancy) losses."""
    l_imi, l_hm, l_occ = (float(v) for v in parts)
    if not all(math.isfinite(v) for v in (l_imi, l_hm, l_occ)):
        raise ValueError("loss parts must be finite")
    return config.lambda_imi * l_imi + config.lambda_hm * l_hm + config.lambda_occ * l_occ
