"""
Command-line interface: generate, solve, evaluate, sweep and reduce-subsetsum.

Exit codes: 0 when a plan or report was written, 1 on an infeasible or incumbent-free
solve, 2 on usage errors, 3 on invalid input data.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .exceptions import AssumptionViolationError, InstanceSchemaError, SamplingError, SizeGuardError
from .models import GeneratorConfig, RunConfig
from .orchestration import PlanningOrchestrator, load_config_file
from .pipelines import build_subsetsum_reduction
from .utils import flatten_plan, read_cells, read_instance, read_plan, write_cells, write_instance, write_plan

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_DATA = 3

MODELS = ["det-compact", "det-benders", "interval", "budgeted"]
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# GeneratorConfig field -> CLI flag
GENERATOR_FLAGS = {
    "n_cells": ("--cells-count", int),
    "n_sites": ("--sites", int),
    "n_practices": ("--practices", int),
    "extent_km": ("--extent-km", float),
    "max_distance_km": ("--delta", float),
    "walkin_fraction": ("--omega", float),
    "weeks": ("--weeks", int),
    "demand_mean": ("--demand-mean", float),
    "mean_heterogeneity": ("--heterogeneity", float),
    "dispersion": ("--dispersion", float),
    "road_detour_factor": ("--detour", float),
    "uncertainty": ("--uncertainty", str),
}


def parse_grid(text: str, default_step: float = 0.05) -> List[float]:
    """Parse "a..b" / "a..b:step" ranges or comma lists into a list of floats."""
    text = text.strip()
    if ".." in text:
        bounds, _, step_text = text.partition(":")
        lo_text, _, hi_text = bounds.partition("..")
        lo, hi = float(lo_text), float(hi_text)
        step = float(step_text) if step_text else default_step
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"invalid range '{text}'")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 6) for i in range(count)]
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid grid '{text}'") from e


def _add_generator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--generator-config", help="JSON file with GeneratorConfig fields")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (default 0)")
    for field, (flag, cast) in GENERATOR_FLAGS.items():
        if field in ("max_distance_km", "walkin_fraction") and parser.prog.endswith("sweep"):
            continue
        kwargs: Dict[str, Any] = {"type": cast, "default": None, "dest": field}
        if field == "uncertainty":
            kwargs["choices"] = ["deterministic", "interval", "budgeted"]
        parser.add_argument(flag, help=f"Override GeneratorConfig.{field}", **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmuplan", description="Exact deterministic and robust planning of mobile medical units."
    )
    parser.add_argument(
        "--log-level",
        default=os.environ.get("MMUPLAN_LOG_LEVEL", "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default $MMUPLAN_LOG_LEVEL or INFO)",
    )
    parser.add_argument("--config", help="Run configuration JSON (default ./config.json if present)")
    parser.add_argument("--backend", help="MILP backend: cbc or highs (default $MMUPLAN_BACKEND or cbc)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Generate a synthetic instance and its cells sidecar")
    _add_generator_flags(gen)
    gen.add_argument("--output", default="out", help="Output directory")

    solve = sub.add_parser("solve", help="Solve one model on an instance")
    solve.add_argument("--instance", required=True, help="Instance JSON")
    solve.add_argument("--model", choices=MODELS, default="det-benders")
    solve.add_argument("--sessions", nargs="+", default=[], metavar="LABEL", help="Expand over these session labels")
    solve.add_argument("--steerable-scope", choices=["all_sessions", "same_session"], default="all_sessions")
    solve.add_argument("--separation", choices=["mincut", "lp"], default=None)
    solve.add_argument("--interval-method", choices=["benders", "compact"], default="benders")
    solve.add_argument("--initial-pool", choices=["empty", "singletons"], default="empty")
    solve.add_argument("--output", default="out", help="Output directory")

    ev = sub.add_parser("evaluate", help="Evaluate plans on sampled demand realizations")
    ev.add_argument("--instance", required=True, help="Instance JSON")
    ev.add_argument("--plan", action="append", default=[], metavar="MODEL=PATH", help="Plan to evaluate (repeatable)")
    ev.add_argument("--cells", help="cells.json written by generate (history sampling, outbreaks)")
    ev.add_argument("--mode", choices=["history", "budgeted-set", "interval-set"], default="history")
    ev.add_argument("--realizations", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--outbreaks", type=int, default=0, help="Outbreak centers per realization")
    ev.add_argument("--outbreak-radius-km", type=float, default=1.0)
    ev.add_argument("--outbreak-factor", type=int, default=2)
    ev.add_argument("--output", default="out", help="Output directory")

    sweep = sub.add_parser("sweep", help="Solve models over a (delta, omega) grid on one geometry")
    _add_generator_flags(sweep)
    sweep.add_argument("--delta-list", type=parse_grid, default=[6.0], help='Driving-distance grid, e.g. "4,6,8"')
    sweep.add_argument("--omega", type=parse_grid, default=[0.2], help='Walk-in fraction grid, e.g. "0.2..0.45"')
    sweep.add_argument("--models", nargs="+", choices=MODELS, default=["det-benders", "budgeted", "interval"])
    sweep.add_argument("--output", default="out", help="Output directory")

    red = sub.add_parser("reduce-subsetsum", help="Emit separation instances from subset-sum inputs")
    red.add_argument("--values", type=lambda s: [int(v) for v in s.split(",")], help="Comma-separated positive integers")
    red.add_argument("--target", type=int, help="Target sum")
    red.add_argument("--count", type=int, default=1, help="Random instances to draw when --values is absent")
    red.add_argument("--size", type=int, default=6, help="Values per random instance")
    red.add_argument("--max-value", type=int, default=20)
    red.add_argument("--seed", type=int, default=0)
    red.add_argument("--output", default="out", help="Output directory")
    return parser


def configure_logging(level: str, output: Optional[str] = None) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)
    if output:
        Path(output).mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(Path(output) / "run.log", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)


def generator_config(args: argparse.Namespace) -> GeneratorConfig:
    data: Dict[str, Any] = {}
    if args.generator_config:
        with open(args.generator_config, "r", encoding="utf-8") as f:
            data.update(json.load(f))
    for field in GENERATOR_FLAGS:
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value
    if args.seed is not None:
        data["seed"] = args.seed
    return GeneratorConfig.model_validate(data)


def run_config(args: argparse.Namespace) -> RunConfig:
    plans: Dict[str, str] = {}
    for item in getattr(args, "plan", []) or []:
        model, sep, path = item.partition("=")
        if not sep or not model or not path:
            raise ValueError(f"--plan expects MODEL=PATH, got '{item}'")
        plans[model] = path
    fields = {
        "command": args.command,
        "instance": getattr(args, "instance", None),
        "model": getattr(args, "model", None),
        "sessions": getattr(args, "sessions", None),
        "steerable_scope": getattr(args, "steerable_scope", None),
        "separation": getattr(args, "separation", None),
        "interval_method": getattr(args, "interval_method", None),
        "initial_pool": getattr(args, "initial_pool", None),
        "seed": getattr(args, "seed", None),
        "output": args.output,
        "realizations": getattr(args, "realizations", None),
        "sample_mode": getattr(args, "mode", None),
        "outbreaks": getattr(args, "outbreaks", None),
        "outbreak_radius_km": getattr(args, "outbreak_radius_km", None),
        "outbreak_factor": getattr(args, "outbreak_factor", None),
        "plans": plans,
        "cells": getattr(args, "cells", None),
        "sweep_models": getattr(args, "models", None),
    }
    return RunConfig.model_validate({k: v for k, v in fields.items() if v is not None})


async def cmd_generate(orchestrator: PlanningOrchestrator, args: argparse.Namespace, cfg: RunConfig) -> int:
    gen_cfg = generator_config(args)
    inst, cells = await orchestrator.generate(gen_cfg)
    out = Path(cfg.output)
    write_instance(inst, out / "instance.json")
    write_cells(cells, out / "cells.json", {"dispersion": gen_cfg.dispersion, "walkin_fraction": gen_cfg.walkin_fraction})
    logger.info(f"wrote {out / 'instance.json'} and {out / 'cells.json'}")
    return EXIT_OK


async def cmd_solve(orchestrator: PlanningOrchestrator, args: argparse.Namespace, cfg: RunConfig) -> int:
    inst = read_instance(cfg.instance)
    result, solved = await orchestrator.solve(
        inst,
        cfg.model,
        sessions=cfg.sessions,
        steerable_scope=cfg.steerable_scope,
        separation=args.separation,
        interval_method=cfg.interval_method,
        initial_pool=cfg.initial_pool,
    )
    if not result.has_plan:
        verdict = "infeasible" if result.status == "infeasible" else f"no plan ({result.status})"
        logger.error(f"{cfg.model} on '{solved.name}': {verdict}")
        print(f"{cfg.model}: {verdict}", file=sys.stderr)
        return EXIT_INFEASIBLE

    extra: Dict[str, Any] = {
        "model": result.model,
        "status": result.status,
        "objective": result.objective,
        "iterations": result.iterations,
    }
    if cfg.sessions:
        extra["schedule"] = flatten_plan(solved, result.plan)
        write_instance(solved, Path(cfg.output) / "instance_expanded.json")
    if result.status == "limit":
        logger.warning(f"{cfg.model}: solver limit reached, plan is flagged as partial")
    path = Path(cfg.output) / "plan.json"
    write_plan(result.plan, path, extra)
    print(f"{cfg.model}: {result.status} objective={result.objective} iterations={result.iterations} -> {path}")
    return EXIT_OK


async def cmd_evaluate(orchestrator: PlanningOrchestrator, args: argparse.Namespace, cfg: RunConfig) -> int:
    inst = read_instance(cfg.instance)
    plans = {model: read_plan(path) for model, path in cfg.plans.items()}
    cells, meta = read_cells(cfg.cells) if cfg.cells else (None, {})
    realizations = await orchestrator.sample(
        inst,
        cfg.sample_mode,
        cfg.realizations,
        cfg.seed,
        cells=cells,
        cells_meta=meta,
        outbreaks=cfg.outbreaks,
        outbreak_radius_km=cfg.outbreak_radius_km,
        outbreak_factor=cfg.outbreak_factor,
    )
    report = await orchestrator.evaluate(inst, plans, realizations, cells)
    paths = orchestrator.emit_report(report, cfg.output)
    for summary in report.summary:
        print(f"{summary.model}: mean={summary.mean:.3f} max={summary.max} p95={summary.p95:g} cost={summary.cost}")
    logger.info(f"wrote {', '.join(str(p) for p in paths.values())}")
    if report.failures:
        logger.error(f"evaluation failed for {sorted(report.failures)}")
        return EXIT_DATA if not report.rows else EXIT_OK
    return EXIT_OK


async def cmd_sweep(orchestrator: PlanningOrchestrator, args: argparse.Namespace, cfg: RunConfig) -> int:
    base = generator_config(args)
    tables = await orchestrator.sweep(base, args.delta_list, args.omega, cfg.sweep_models, cfg.output)
    print(tables["objectives"].to_string(index=False))
    return EXIT_OK


async def cmd_reduce_subsetsum(orchestrator: PlanningOrchestrator, args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.values:
        if args.target is None:
            raise ValueError("--values needs --target")
        cases = [(args.values, args.target)]
    else:
        rng = np.random.default_rng(args.seed)
        cases = []
        for _ in range(args.count):
            values = [int(v) for v in rng.integers(1, args.max_value + 1, size=args.size)]
            cases.append((values, int(rng.integers(1, sum(values) + 1))))

    out = Path(cfg.output)
    for i, (values, target) in enumerate(cases):
        inst, sessions, route = build_subsetsum_reduction(values, target)
        write_instance(inst, out / f"subsetsum_{i}.json")
        with open(out / f"first_stage_{i}.json", "w", encoding="utf-8") as f:
            json.dump({"sessions": sessions, "walkin_route": route}, f, indent=2)
            f.write("\n")
    logger.info(f"wrote {len(cases)} subset-sum separation instances to {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "reduce-subsetsum": cmd_reduce_subsetsum,
}


async def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = run_config(args)
    except (ValidationError, ValueError) as e:
        parser.error(str(e))

    configure_logging(args.log_level, cfg.output if args.command in ("solve", "evaluate", "sweep") else None)
    explicit = {"backend": args.backend} if args.backend else {}
    orchestrator = PlanningOrchestrator(explicit, file_config=load_config_file(args.config))
    try:
        await orchestrator.initialize()
        return await COMMANDS[args.command](orchestrator, args, cfg)
    except (InstanceSchemaError, AssumptionViolationError, SamplingError, SizeGuardError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    finally:
        await orchestrator.shutdown()
