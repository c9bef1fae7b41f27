from typing import Dict, Any, Optional, List, Tuple, Sequence
import asyncio
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

from .backends import BaseBackend, SolverConfig, get_backend
from .models import Cell, EvaluationReport, GeneratorConfig, Instance, Plan, Realization, SolveResult
from .pipelines import BendersSolver, CompactSolver, InstanceGenerator, PlanEvaluator, RobustSolver
from .utils import expand_sessions, validate_instance
from .exceptions import InstanceSchemaError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "backend": "cbc",
    "threads": 1,
    "gap_tolerance": 1e-4,
    "time_limit": None,
    "separation": "mincut",
    "workers": 2,
}

ENVIRONMENT = {
    "backend": ("MMUPLAN_BACKEND", str),
    "threads": ("MMUPLAN_THREADS", int),
    "time_limit": ("MMUPLAN_TIME_LIMIT", float),
    "gap_tolerance": ("MMUPLAN_GAP", float),
    "workers": ("MMUPLAN_WORKERS", int),
}

OBJECTIVE_COLUMNS = ["delta", "omega", "model", "status", "objective", "iterations"]
INSTANCE_COLUMNS = ["delta", "omega", "n_origins", "total_nominal", "total_worst_case", "gamma_steerable", "gamma_walkin"]
PRICE_COLUMNS = ["delta", "omega", "model", "objective", "nominal_objective", "relative_increase"]
TIMING_COLUMNS = ["delta", "omega", "model", "cpu_seconds"]
NOMINAL_MODELS = ("det-benders", "det-compact")
INTEGER_COLUMNS = ("objective", "iterations", "nominal_objective", "n_origins", "total_nominal", "total_worst_case", "gamma_steerable", "gamma_walkin")


def load_config_file(path: Optional[str] = None) -> Dict[str, Any]:
    """Read run defaults from a JSON file; a missing default ``config.json`` yields {}."""
    candidate = Path(path or "config.json")
    if not candidate.exists():
        if path:
            raise FileNotFoundError(f"config file not found: {path}")
        return {}
    with open(candidate, "r", encoding="utf-8") as f:
        return json.load(f)


def build_pipelines(backend: BaseBackend) -> Dict[str, Any]:
    return {
        "compact": CompactSolver(backend),
        "benders": BendersSolver(backend),
        "robust": RobustSolver(backend),
        "evaluator": PlanEvaluator(backend),
    }


def run_model(
    pipelines: Dict[str, Any],
    inst: Instance,
    model: str,
    separation: str = "mincut",
    interval_method: str = "benders",
    initial_pool: str = "empty",
) -> SolveResult:
    """Dispatch one model to its solver."""
    if model == "det-compact":
        return pipelines["compact"].solve_compact(inst)
    if model == "det-benders":
        return pipelines["benders"].solve_benders(inst, separation, initial_pool)
    if model == "interval":
        return pipelines["robust"].solve_interval(inst, interval_method, separation, initial_pool)
    if model == "budgeted":
        return pipelines["robust"].solve_budgeted(inst)
    raise ValueError(f"Unknown model: {model}")


def _sweep_cell(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Worker: generate one (delta, omega) instance on the shared geometry and solve every model."""
    cfg = GeneratorConfig.model_validate(payload["generator"])
    backend = get_backend(payload["backend"], SolverConfig.model_validate(payload["solver"]))
    pipelines = build_pipelines(backend)
    inst, _ = InstanceGenerator(cfg).generate()

    violations = validate_instance(inst)
    if violations:
        raise InstanceSchemaError(f"generated instance '{inst.name}' is invalid: {violations[:3]}")

    results = []
    for model in payload["models"]:
        start = time.process_time()
        result = run_model(pipelines, inst, model, payload["separation"])
        results.append(
            {
                "model": model,
                "status": result.status,
                "objective": result.objective,
                "iterations": result.iterations,
                "cpu_seconds": time.process_time() - start,
            }
        )
    unc = inst.uncertainty
    return {
        "delta": cfg.max_distance_km,
        "omega": cfg.walkin_fraction,
        "instance": {
            "n_origins": len(inst.origins),
            "total_nominal": sum(o.steerable_nominal + o.walkin_nominal for o in inst.origins),
            "total_worst_case": sum(o.steerable_hi + o.walkin_hi for o in inst.origins),
            "gamma_steerable": unc.gamma_steerable,
            "gamma_walkin": unc.gamma_walkin,
        },
        "results": results,
    }


class PlanningOrchestrator:
    """
    Orchestrates planning runs by managing the solver backend and pipelines.

    Configuration precedence: explicit config dict, then environment variables
    (MMUPLAN_BACKEND, MMUPLAN_THREADS, MMUPLAN_TIME_LIMIT, MMUPLAN_GAP, MMUPLAN_WORKERS),
    then the run configuration file, then built-in defaults.
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None, file_config: Optional[Dict[str, Any]] = None):
        """
        Initialize the orchestrator with optional configuration.

        Args:
            config: Explicit settings, e.g. from command-line flags
            file_config: Settings read from config.json; environment variables override them
        """
        self.config = {key: value for key, value in (config or {}).items() if value is not None}

        for key, (variable, cast) in ENVIRONMENT.items():
            if key not in self.config and os.environ.get(variable):
                self.config[key] = cast(os.environ[variable])
        for key, value in (file_config or {}).items():
            if value is not None:
                self.config.setdefault(key, value)
        for key, value in DEFAULTS.items():
            self.config.setdefault(key, value)

        self._backends: Dict[str, BaseBackend] = {}
        self._pipelines: Dict[str, Any] = {}
        self._initialized = False

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            time_limit=self.config.get("time_limit"),
            threads=int(self.config.get("threads") or 1),
            gap_tolerance=float(self.config.get("gap_tolerance")),
        )

    async def initialize(self):
        """Initialize the backend and pipelines."""
        if self._initialized:
            return
        backend = get_backend(self.config["backend"], self.solver_config)
        self._backends = {"default": backend}
        self._pipelines = build_pipelines(backend)
        logger.info(f"initialized backend {backend.name}")
        self._initialized = True

    async def shutdown(self):
        """Clean up resources."""
        self._pipelines = {}
        self._backends = {}
        self._initialized = False

    async def generate(self, cfg: GeneratorConfig) -> Tuple[Instance, List[Cell]]:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(None, InstanceGenerator(cfg).generate)

    def prepare_instance(
        self, inst: Instance, sessions: Optional[Sequence[str]] = None, steerable_scope: str = "all_sessions"
    ) -> Instance:
        """Validate and, with session labels, expand an instance."""
        violations = validate_instance(inst)
        if violations:
            for violation in violations:
                logger.error(f"instance '{inst.name}': {violation}")
            raise InstanceSchemaError(f"instance '{inst.name}' has {len(violations)} violations: {violations[0]}")
        if sessions:
            inst = expand_sessions(inst, list(sessions), steerable_scope=steerable_scope)
            logger.info(f"expanded '{inst.name}' over sessions {list(sessions)}")
        return inst

    async def solve(
        self,
        inst: Instance,
        model: str,
        sessions: Optional[Sequence[str]] = None,
        steerable_scope: str = "all_sessions",
        separation: Optional[str] = None,
        interval_method: str = "benders",
        initial_pool: str = "empty",
    ) -> Tuple[SolveResult, Instance]:
        """
        Solve one model on an instance.

        Args:
            inst: Instance as read from disk
            model: "det-compact", "det-benders", "interval" or "budgeted"
            sessions: Session labels to expand over (optional)
            steerable_scope: Cross-session rule for steerable consideration
            separation: "mincut" or "lp"; defaults to the configured separation
            interval_method: "benders" or "compact" for the interval model
            initial_pool: "empty" or "singletons"

        Returns:
            (SolveResult, the instance actually solved)
        """
        await self.initialize()
        prepared = self.prepare_instance(inst, sessions, steerable_scope)
        loop = asyncio.get_running_loop()
        result = await loop.run_in_executor(
            None,
            run_model,
            self._pipelines,
            prepared,
            model,
            separation or self.config["separation"],
            interval_method,
            initial_pool,
        )
        logger.info(f"{model} on '{prepared.name}': {result.status}, objective {result.objective}")
        return result, prepared

    async def sample(
        self,
        inst: Instance,
        mode: str,
        n: int,
        seed: int = 0,
        cells: Optional[List[Cell]] = None,
        cells_meta: Optional[Dict[str, Any]] = None,
        outbreaks: int = 0,
        outbreak_radius_km: float = 1.0,
        outbreak_factor: int = 2,
    ) -> List[Realization]:
        """Draw realizations, with outbreaks applied to history draws when requested."""
        await self.initialize()
        evaluator: PlanEvaluator = self._pipelines["evaluator"]
        meta = cells_meta or {}
        loop = asyncio.get_running_loop()
        realizations = await loop.run_in_executor(
            None,
            lambda: evaluator.sample_realizations(
                inst,
                mode,
                n,
                seed,
                cells=cells,
                walkin_fraction=meta.get("walkin_fraction"),
                dispersion=meta.get("dispersion"),
            ),
        )
        if outbreaks:
            if mode != "history":
                raise ValueError("outbreaks perturb cell-level history draws only")
            logger.info(f"applying {outbreaks} outbreaks (radius {outbreak_radius_km} km, factor {outbreak_factor}) successively")
            realizations = [
                evaluator.apply_outbreaks(cells, r, outbreaks, outbreak_radius_km, outbreak_factor, seed)
                for r in realizations
            ]
        return realizations

    async def evaluate(
        self,
        inst: Instance,
        plans: Dict[str, Plan],
        realizations: List[Realization],
        cells: Optional[List[Cell]] = None,
    ) -> EvaluationReport:
        """
        Evaluate every plan on the same realizations, one executor task per model.

        A model whose evaluation fails is logged and recorded in ``failures``.
        """
        await self.initialize()
        evaluator: PlanEvaluator = self._pipelines["evaluator"]
        loop = asyncio.get_running_loop()
        tasks = [
            loop.run_in_executor(None, evaluator.evaluate_models, inst, {model: plan}, realizations, cells)
            for model, plan in plans.items()
        ]
        outcomes = await asyncio.gather(*tasks, return_exceptions=True)

        merged = EvaluationReport()
        for model, outcome in zip(plans, outcomes):
            if isinstance(outcome, Exception):
                logger.error(f"Error evaluating {model}: {outcome}")
                merged.failures[model] = str(outcome)
                continue
            merged.rows.extend(outcome.rows)
            merged.summary.extend(outcome.summary)
            merged.ecdf.extend(outcome.ecdf)
        return merged

    async def sweep(
        self,
        base: GeneratorConfig,
        deltas: Sequence[float],
        omegas: Sequence[float],
        models: Sequence[str],
        out_dir: str,
    ) -> Dict[str, pd.DataFrame]:
        """
        Solve every model on every (delta, omega) instance of one fixed geometry.

        Grid cells run in a process pool; a failing cell is logged and its models are
        reported with status "error". Tables are sorted by (delta, omega, model) so that
        reruns with the same seed write identical files (CPU times go to timings.csv).
        """
        payloads = [
            {
                "generator": base.model_copy(update={"max_distance_km": delta, "walkin_fraction": omega}).model_dump(),
                "backend": self.config["backend"],
                "solver": self.solver_config.model_dump(),
                "models": list(models),
                "separation": self.config["separation"],
            }
            for delta in deltas
            for omega in omegas
        ]
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=int(self.config["workers"])) as pool:
            outcomes = await asyncio.gather(
                *(loop.run_in_executor(pool, _sweep_cell, payload) for payload in payloads),
                return_exceptions=True,
            )

        objectives, instances, prices, timings = [], [], [], []
        for payload, outcome in zip(payloads, outcomes):
            delta = payload["generator"]["max_distance_km"]
            omega = payload["generator"]["walkin_fraction"]
            if isinstance(outcome, Exception):
                logger.error(f"Error in sweep cell delta={delta} omega={omega}: {outcome}")
                objectives.extend(
                    {"delta": delta, "omega": omega, "model": m, "status": "error", "objective": None, "iterations": None}
                    for m in models
                )
                continue
            instances.append({"delta": delta, "omega": omega, **outcome["instance"]})
            nominal = next(
                (r["objective"] for r in outcome["results"] if r["model"] in NOMINAL_MODELS and r["status"] == "optimal"),
                None,
            )
            for r in outcome["results"]:
                objectives.append({"delta": delta, "omega": omega, **{k: r[k] for k in OBJECTIVE_COLUMNS[2:]}})
                timings.append({"delta": delta, "omega": omega, "model": r["model"], "cpu_seconds": r["cpu_seconds"]})
                if r["model"] not in NOMINAL_MODELS and r["objective"] is not None and nominal is not None:
                    increase = (r["objective"] - nominal) / nominal if nominal > 0 else None
                    prices.append(
                        {
                            "delta": delta,
                            "omega": omega,
                            "model": r["model"],
                            "objective": r["objective"],
                            "nominal_objective": nominal,
                            "relative_increase": increase,
                        }
                    )

        tables = {
            "objectives": pd.DataFrame(objectives, columns=OBJECTIVE_COLUMNS),
            "instances": pd.DataFrame(instances, columns=INSTANCE_COLUMNS),
            "price_of_robustness": pd.DataFrame(prices, columns=PRICE_COLUMNS),
            "timings": pd.DataFrame(timings, columns=TIMING_COLUMNS),
        }
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, frame in tables.items():
            keys = [c for c in ("delta", "omega", "model") if c in frame.columns]
            frame = frame.sort_values(keys, kind="stable").reset_index(drop=True)
            for column in INTEGER_COLUMNS:
                if column in frame.columns:
                    frame[column] = frame[column].astype("Int64")
            tables[name] = frame
            frame.to_csv(out / f"{name}.csv", index=False)
        logger.info(f"sweep over {len(payloads)} grid cells written to {out}")
        return tables

    def emit_report(self, report: EvaluationReport, out_dir: str) -> Dict[str, Path]:
        return PlanEvaluator().emit_report(report, out_dir)
