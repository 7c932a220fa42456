"""Command line: ``heatplan {gen,plan,simulate,eval,render}``.

Exit status 0 on success, 1 on a domain failure (infeasible plan, invalid
scenario, failed rows), 2 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from typing import Optional

from . import __version__
from .config import ConfigError, RunConfig
from .perturb import RecoveryFitError
from .pipeline import plan_with_bundle
from .predictor import PredictionError, load_bundle, predict, save_bundle, trajectory_to_dict
from .raster import MAGIC, read_grid, write_grid
from .render import render_grid, render_tick
from .scenario import ScenarioParseError, ScenarioValidationError, read_scenario, write_scenario
from .sim import METRICS, SimulationLog, compute_metrics, default_workers, evaluate_batch, run_closed_loop
from .solver import SolverError
from .synthetic import KINDS, ParamError, generate_synthetic, synthetic_suite

log = logging.getLogger("heatplan")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_params(pairs, blob: Optional[str]) -> dict:
    params = {}
    if blob:
        try:
            params.update(json.loads(blob))
        except json.JSONDecodeError as e:
            raise UsageError(f"--params is not valid JSON: {e}") from None
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--param expects name=value, got {pair!r}")
        k, v = pair.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
    return params


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    sim_changes = {}
    if getattr(args, "no_solver", False):
        sim_changes["use_solver"] = False
    if getattr(args, "no_heatmap_term", False):
        sim_changes["use_heatmap"] = False
    if getattr(args, "agent_mode", None):
        sim_changes["agent_mode"] = args.agent_mode
    if getattr(args, "record_grids", False):
        sim_changes["record_grids"] = True
    if sim_changes:
        changes["sim"] = cfg.sim.replace(**sim_changes)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.suite:
        out = args.out or "scenarios"
        os.makedirs(out, exist_ok=True)
        for s in synthetic_suite(args.n_per_kind, seed):
            write_scenario(s, os.path.join(out, f"{s.name}.json"))
        print(f"wrote {args.n_per_kind * len(KINDS)} scenarios to {out}")
        return EXIT_OK
    if not args.kind:
        raise UsageError("gen needs a scenario kind (or --suite)")
    s = generate_synthetic(args.kind, _parse_params(args.param, args.params), seed)
    out = args.out or f"{s.name}.json"
    if not out.endswith(".json"):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, f"{s.name}.json")
    write_scenario(s, out)
    print(out)
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _load_config(args)
    s = read_scenario(args.scenario)
    if args.bundle:
        bundle = load_bundle(*args.bundle)
    elif cfg.bundle:
        bundle = load_bundle(cfg.bundle["plan"], cfg.bundle["heatmap"], cfg.bundle["occupancy"])
    else:
        bundle = predict(s, cfg.predictor, cfg.seed)
    out = plan_with_bundle(s, bundle, cfg.solver, cfg.sim.use_solver, cfg.sim.use_heatmap, cfg.sim.window)
    d = _out_dir(cfg)
    _write_json(os.path.join(d, "initial_plan.json"), trajectory_to_dict(bundle.initial_plan))
    _write_json(os.path.join(d, "plan.json"), trajectory_to_dict(out.trajectory))
    report = {"scenario": s.name, "solver": cfg.sim.use_solver}
    if out.result is not None:
        r = out.result
        report.update(initial=r.initial_breakdown.as_dict(), refined=r.breakdown.as_dict(),
                      iterations=r.iterations, converged=r.converged, feasible=r.feasible,
                      projected=r.projected, violations=r.violations)
    _write_json(os.path.join(d, "breakdown.json"), report)
    if args.grids:
        save_bundle(bundle, os.path.join(d, "bundle_plan.json"), os.path.join(d, "heatmap.bin"),
                    os.path.join(d, "occupancy.bin"))
        write_grid(out.density, os.path.join(d, "density.bin"))
    print(json.dumps({k: report[k] for k in report if k in ("scenario", "feasible", "iterations")}, sort_keys=True))
    if out.result is not None and not out.result.feasible:
        print("error: refined plan violates hard bounds", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    s = read_scenario(args.scenario)
    sim_log = run_closed_loop(s, cfg.predictor, cfg.solver, cfg.sim, cfg.seed)
    report = compute_metrics(sim_log, s, cfg.sim, cfg.solver)
    d = _out_dir(cfg)
    sim_log.write(os.path.join(d, "log.jsonl"))
    _write_json(os.path.join(d, "metrics.json"), report.to_dict())
    print(json.dumps(report.scores(), sort_keys=True))
    return EXIT_OK


def eval_rows(results) -> list:
    cols = list(METRICS) + ["aggregate"]
    rows = []
    for r in results:
        if r["ok"]:
            sc = r["report"].scores()
            rows.append([r["name"]] + [f"{sc[c]:.6f}" for c in cols] + [""])
        else:
            rows.append([r["name"]] + [""] * len(cols) + [r["error"]])
    good = [r["report"].scores() for r in results if r["ok"]]
    if good:
        rows.append(["mean"] + [f"{sum(g[c] for g in good) / len(good):.6f}" for c in cols] + [""])
    return [["scenario"] + cols + ["error"]] + rows


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if not os.path.isdir(args.scenario_dir):
        raise FileNotFoundError(f"not a directory: {args.scenario_dir}")
    files = sorted(f for f in os.listdir(args.scenario_dir) if f.endswith(".json"))
    if not files:
        raise UsageError(f"no scenario files in {args.scenario_dir}")
    scenarios, failed = [], []
    for f in files:
        try:
            scenarios.append(read_scenario(os.path.join(args.scenario_dir, f)))
        except (ScenarioParseError, ScenarioValidationError) as e:
            failed.append({"name": f, "ok": False, "error": str(e)})
    workers = default_workers() if args.workers is None else args.workers
    results = evaluate_batch(scenarios, cfg.predictor, cfg.solver, cfg.sim, cfg.seed, workers)
    # keep rows in filename order regardless of which ones failed to load
    by_name = {r["name"]: r for r in results + failed}
    ordered = []
    for f, s_name in zip(files, _names(files, scenarios, failed)):
        ordered.append(by_name[s_name])
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(eval_rows(ordered))
    d = _out_dir(cfg)
    with open(os.path.join(d, "eval.csv"), "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_DOMAIN if any(not r["ok"] for r in ordered) else EXIT_OK


def _names(files, scenarios, failed) -> list:
    it = iter(scenarios)
    bad = {f["name"] for f in failed}
    return [f if f in bad else next(it).name for f in files]


def cmd_render(args) -> int:
    with open(args.path, "rb") as f:
        head = f.read(len(MAGIC))
    if head == MAGIC:
        svg = render_grid(read_grid(args.path), args.timestep)
        _write_text(args.out or "grid.svg", svg)
        return EXIT_OK
    sim_log = SimulationLog.read(args.path)
    ticks = range(len(sim_log.ticks)) if args.all else [args.tick]
    out = args.out or "render"
    if args.all or not out.endswith(".svg"):
        os.makedirs(out, exist_ok=True)
    for t in ticks:
        svg = render_tick(sim_log, t, show_heatmap=not args.no_heatmap)
        path = out if (out.endswith(".svg") and not args.all) else os.path.join(out, f"tick_{t:04d}.svg")
        _write_text(path, svg)
    return EXIT_OK


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (or file for gen/render)")
    ablate = argparse.ArgumentParser(add_help=False)
    ablate.add_argument("--no-solver", action="store_true", help="execute the initial plan unrefined")
    ablate.add_argument("--no-heatmap-term", action="store_true", help="drop the heatmap reward")

    p = argparse.ArgumentParser(prog="heatplan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic scenario")
    g.add_argument("kind", nargs="?", choices=KINDS)
    g.add_argument("--param", action="append", metavar="NAME=VALUE")
    g.add_argument("--params", help="parameters as a JSON object")
    g.add_argument("--suite", action="store_true", help="write the evaluation suite to --out")
    g.add_argument("--n-per-kind", type=int, default=5)
    g.set_defaults(func=cmd_gen)

    pl = sub.add_parser("plan", parents=[common, ablate], help="single-shot planning")
    pl.add_argument("scenario")
    pl.add_argument("--grids", action="store_true", help="also write heatmap/occupancy/density grids")
    pl.add_argument("--bundle", nargs=3, metavar=("PLAN", "HEATMAP", "OCCUPANCY"),
                    help="use an external prediction bundle")
    pl.set_defaults(func=cmd_plan)

    sm = sub.add_parser("simulate", parents=[common, ablate], help="closed-loop simulation")
    sm.add_argument("scenario")
    sm.add_argument("--agent-mode", choices=("non_reactive", "reactive"))
    sm.add_argument("--record-grids", action="store_true", help="store heat/danger pixels in the log")
    sm.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("eval", parents=[common, ablate], help="batch closed-loop evaluation")
    ev.add_argument("scenario_dir")
    ev.add_argument("--agent-mode", choices=("non_reactive", "reactive"))
    ev.add_argument("--workers", type=int, help="process count (default: HEATPLAN_THREADS or CPU count)")
    ev.set_defaults(func=cmd_eval)

    rd = sub.add_parser("render", parents=[common], help="render a log tick or a grid to SVG")
    rd.add_argument("path")
    rd.add_argument("--tick", type=int, default=0)
    rd.add_argument("--all", action="store_true", help="render every tick")
    rd.add_argument("--timestep", type=int, help="grid timestep (default: max over time)")
    rd.add_argument("--no-heatmap", action="store_true")
    rd.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParamError, ScenarioParseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioValidationError, SolverError, PredictionError, RecoveryFitError, RuntimeError,
            ValueError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
