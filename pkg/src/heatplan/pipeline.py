"""One planning cycle: prediction bundle -> non-drivable map -> density -> refine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .collision import DEFAULT_WINDOW, CollisionDensityMap, NonDrivableMap, build_non_drivable, density_for_plan
from .predictor import PredictionBundle
from .scenario import Scenario
from .solver import RefinementResult, SolverConfig, refine


@dataclass
class PlanOutput:
    bundle: PredictionBundle
    non_drivable: NonDrivableMap
    density: CollisionDensityMap
    result: Optional[RefinementResult]  # None when the solver is disabled

    @property
    def trajectory(self):
        return self.bundle.initial_plan if self.result is None else self.result.trajectory


def build_density(s: Scenario, bundle: PredictionBundle, config: SolverConfig,
                  window: Optional[int] = DEFAULT_WINDOW) -> tuple:
    frame = bundle.occupancy.frame
    nd = build_non_drivable(bundle.occupancy, s.map.static_objects, s.map.drivable_area, frame)
    return nd, density_for_plan(nd, bundle.initial_plan, config.footprint, window)


def plan_with_bundle(s: Scenario, bundle: PredictionBundle, config: SolverConfig, use_solver: bool = True,
                     use_heatmap: bool = True, window: Optional[int] = DEFAULT_WINDOW) -> PlanOutput:
    nd, density = build_density(s, bundle, config, window)
    if not use_solver:
        return PlanOutput(bundle, nd, density, None)
    cfg = config if use_heatmap else config.replace(lambda_h=0.0)
    return PlanOutput(bundle, nd, density, refine(bundle.initial_plan, density, bundle.heatmap, cfg))
