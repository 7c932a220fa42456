"""Unified run configuration read by the command line."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .losses import LossConfig
from .perturb import PerturbRanges
from .predictor import PredictorConfig
from .sim import SimConfig
from .solver import SolverConfig

SECTIONS = ("solver", "loss", "sim", "perturb", "predictor", "seed", "out_dir", "bundle")
BUNDLE_KEYS = ("plan", "heatmap", "occupancy")


class ConfigError(ValueError):
    pass


def default_predictor() -> PredictorConfig:
    return PredictorConfig(kind="noised_expert", noise_lateral=0.5, noise_longitudinal=0.5)


@dataclass(frozen=True)
class RunConfig:
    solver: SolverConfig = field(default_factory=SolverConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    perturb: PerturbRanges = field(default_factory=PerturbRanges)
    predictor: PredictorConfig = field(default_factory=default_predictor)
    seed: int = 0
    out_dir: str = "out"
    bundle: Optional[dict] = None  # paths of an externally produced prediction bundle

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.bundle is not None:
            bad = sorted(set(self.bundle) ^ set(BUNDLE_KEYS))
            if bad:
                raise ConfigError(f"bundle needs exactly the keys {list(BUNDLE_KEYS)}; offending: {bad}")
            for k, path in self.bundle.items():
                if not os.path.isfile(path):
                    raise ConfigError(f"bundle.{k}: file not found: {path}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kw = {}
        try:
            if "solver" in d:
                kw["solver"] = SolverConfig.from_dict(d["solver"])
            if "loss" in d:
                kw["loss"] = LossConfig.from_dict(d["loss"])
            if "sim" in d:
                kw["sim"] = SimConfig.from_dict(d["sim"])
            if "perturb" in d:
                kw["perturb"] = PerturbRanges.from_dict(d["perturb"])
            if "predictor" in d:
                kw["predictor"] = PredictorConfig.from_dict(d["predictor"])
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        if "seed" in d:
            kw["seed"] = d["seed"]
        if "out_dir" in d:
            kw["out_dir"] = str(d["out_dir"])
        if d.get("bundle") is not None:
            if not isinstance(d["bundle"], dict):
                raise ConfigError("bundle must be an object")
            kw["bundle"] = {k: os.path.join(base_dir, v) for k, v in d["bundle"].items()}
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        return {"solver": self.solver.to_dict(), "loss": self.loss.to_dict(), "sim": self.sim.to_dict(),
                "perturb": self.perturb.to_dict(), "predictor": self.predictor.to_dict(), "seed": self.seed,
                "out_dir": self.out_dir, "bundle": self.bundle}
