"""
Monte-Carlo evaluation of operation plans.

A plan is scored on a demand realization by the minimum total number of violations:
walk-ins go to their closest operating facility, steerable demand is spread over the
consideration sets, and every treatment beyond a facility's weekly capacity counts once.
"""

import logging
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..backends import BaseBackend
from ..exceptions import SamplingError
from ..models import Cell, EcdfPoint, EvaluationReport, Instance, ModelSummary, Plan, Realization, ViolationRow
from ..utils.maxflow import ResidualCapacities, build_benders_network, facility_capacities, max_flow
from ..utils.planning import closest_routes, operating_sites, plan_cost
from .instance_generator import sample_weekly_visits

logger = logging.getLogger(__name__)

SampleMode = Literal["history", "budgeted-set", "interval-set"]

SAMPLE_STREAM = 3
OUTBREAK_STREAM = 4
REJECTION_BATCH = 256


def nominal_realization(inst: Instance, realization_id: int = 0) -> Realization:
    return Realization(
        id=realization_id,
        steerable={o.id: o.steerable_nominal for o in inst.origins},
        walkin={o.id: o.walkin_nominal for o in inst.origins},
        provenance="nominal",
    )


def aggregate_realization(inst: Instance, cells: Sequence[Cell], realization: Realization) -> Realization:
    """Sum a cell-level realization onto the origins of ``inst``."""
    if realization.level == "origin":
        return realization
    steerable = {o.id: 0 for o in inst.origins}
    walkin = {o.id: 0 for o in inst.origins}
    for cell in cells:
        if cell.origin_id not in steerable:
            raise ValueError(f"cell '{cell.id}' maps to origin '{cell.origin_id}' which is not in '{inst.name}'")
        steerable[cell.origin_id] += realization.steerable.get(cell.id, 0)
        walkin[cell.origin_id] += realization.walkin.get(cell.id, 0)
    return realization.model_copy(update={"steerable": steerable, "walkin": walkin, "level": "origin"})


def _uniform_box(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray, size: int) -> np.ndarray:
    return rng.integers(lo, hi + 1, size=(size, len(lo)))


def _sample_by_counting(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray, budget: int, size: int) -> np.ndarray:
    """
    Exact uniform draws of integer vectors in [lo, hi] with total at most ``budget``.

    Row k of the table counts (up to a per-row scale) the ways the first k coordinates
    reach each shifted total; draws walk the table backwards.
    """
    ranges = (hi - lo).astype(np.int64)
    slack = int(budget - lo.sum())
    n = len(lo)
    table = np.zeros((n + 1, slack + 1))
    table[0, 0] = 1.0
    for k in range(n):
        cumulative = np.concatenate([[0.0], np.cumsum(table[k])])
        upper = np.arange(1, slack + 2)
        lower = np.maximum(upper - ranges[k] - 1, 0)
        row = cumulative[upper] - cumulative[lower]
        row = np.maximum(row, 0.0)
        table[k + 1] = row / row.max()

    draws = np.zeros((size, n), dtype=np.int64)
    final = table[n] / table[n].sum()
    for j in range(size):
        remaining = int(rng.choice(slack + 1, p=final))
        for k in range(n - 1, -1, -1):
            options = np.arange(0, min(int(ranges[k]), remaining) + 1)
            weights = table[k, remaining - options]
            pick = int(rng.choice(options, p=weights / weights.sum()))
            draws[j, k] = pick
            remaining -= pick
    return draws + lo


def sample_budgeted_box(
    rng: np.random.Generator,
    lo: np.ndarray,
    hi: np.ndarray,
    budget: int,
    size: int,
    max_draws: int,
    exact_fallback: bool = True,
) -> np.ndarray:
    """
    Uniform integer vectors in the box [lo, hi] whose total is at most ``budget``.

    Draws batches from the box and keeps those under the budget. When ``max_draws`` box
    draws do not yield ``size`` samples, either switches to the exact counting sampler or
    raises SamplingError.
    """
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    if lo.sum() > budget:
        raise SamplingError(f"budget {budget} is below the sum of lower bounds {int(lo.sum())}")
    if hi.sum() <= budget:
        return _uniform_box(rng, lo, hi, size)

    accepted: List[np.ndarray] = []
    n_accepted = 0
    drawn = 0
    while n_accepted < size and drawn < max_draws:
        batch = _uniform_box(rng, lo, hi, min(REJECTION_BATCH, max_draws - drawn))
        drawn += len(batch)
        keep = batch[batch.sum(axis=1) <= budget]
        accepted.append(keep)
        n_accepted += len(keep)
    if n_accepted >= size:
        return np.vstack(accepted)[:size]

    message = (
        f"rejection sampling accepted {n_accepted}/{drawn} box draws (need {size}); "
        f"budget {budget}, sum lo {int(lo.sum())}, sum hi {int(hi.sum())}"
    )
    if not exact_fallback:
        raise SamplingError(message)
    logger.warning(f"{message}; switching to exact counting sampler")
    return _sample_by_counting(rng, lo, hi, budget, size)


class PlanEvaluator:
    """
    Samples demand realizations and scores plans against them.

    Args:
        backend: Backend for the violations MILP cross-check (optional)
    """

    def __init__(self, backend: Optional[BaseBackend] = None):
        self.backend = backend

    def sample_realizations(
        self,
        inst: Instance,
        mode: SampleMode,
        n: int,
        seed: int = 0,
        cells: Optional[Sequence[Cell]] = None,
        walkin_fraction: Optional[float] = None,
        dispersion: Optional[float] = None,
        max_draws: Optional[int] = None,
        exact_fallback: bool = True,
    ) -> List[Realization]:
        """
        Draw ``n`` demand realizations.

        Args:
            inst: Instance whose bounds and budgets define the sets
            mode: "history" (fresh weekly visits per cell, each a walk-in with probability
                ``walkin_fraction``), "budgeted-set" or "interval-set" (uniform over the sets)
            n: Number of realizations
            seed: Random seed
            cells: Generator cells, required for history mode
            walkin_fraction: Walk-in probability per visit, history mode
            dispersion: Negative-binomial dispersion of the weekly visits, None for Poisson
            max_draws: Box draws allowed per set before giving up on rejection sampling
            exact_fallback: Use the exact sampler instead of raising when rejection runs out

        Returns:
            Realizations; cell-level for history mode, origin-level otherwise
        """
        if n < 1:
            raise ValueError(f"need at least one realization, got {n}")
        rng = np.random.default_rng([seed, SAMPLE_STREAM])

        if mode == "history":
            if cells is None or walkin_fraction is None:
                raise ValueError("history sampling needs the generator cells and the walk-in fraction")
            means = np.array([cell.mean for cell in cells], dtype=float)
            visits = sample_weekly_visits(rng, means, n, dispersion)  # (cells, n)
            walkins = rng.binomial(visits, walkin_fraction)
            return [
                Realization(
                    id=i,
                    steerable={cell.id: int(visits[c, i] - walkins[c, i]) for c, cell in enumerate(cells)},
                    walkin={cell.id: int(walkins[c, i]) for c, cell in enumerate(cells)},
                    level="cell",
                    provenance="sampled-history",
                )
                for i in range(n)
            ]

        alpha = np.array([o.steerable_lo for o in inst.origins], dtype=np.int64)
        beta = np.array([o.steerable_hi for o in inst.origins], dtype=np.int64)
        sigma = np.array([o.walkin_lo for o in inst.origins], dtype=np.int64)
        tau = np.array([o.walkin_hi for o in inst.origins], dtype=np.int64)
        ids = [o.id for o in inst.origins]

        if mode == "interval-set":
            steerable = _uniform_box(rng, alpha, beta, n)
            walkin = _uniform_box(rng, sigma, tau, n)
            provenance = "interval-set"
        elif mode == "budgeted-set":
            unc = inst.uncertainty
            if unc.kind != "budgeted" or unc.gamma_steerable is None or unc.gamma_walkin is None:
                raise ValueError(f"budgeted-set sampling needs budgeted uncertainty on '{inst.name}'")
            limit = max_draws or 1000 * n
            steerable = sample_budgeted_box(rng, alpha, beta, unc.gamma_steerable, n, limit, exact_fallback)
            walkin = sample_budgeted_box(rng, sigma, tau, unc.gamma_walkin, n, limit, exact_fallback)
            provenance = "budget-set"
        else:
            raise ValueError(f"Unknown sample mode: {mode}")

        return [
            Realization(
                id=i,
                steerable=dict(zip(ids, map(int, steerable[i]))),
                walkin=dict(zip(ids, map(int, walkin[i]))),
                provenance=provenance,
            )
            for i in range(n)
        ]

    def apply_outbreaks(
        self,
        cells: Sequence[Cell],
        realization: Realization,
        k: int = 5,
        radius_km: float = 1.0,
        factor: int = 2,
        seed: int = 0,
    ) -> Realization:
        """
        Multiply demand around ``k`` random outbreak centers.

        Centers are distinct cells drawn one after the other; every cell within ``radius_km``
        (straight line) of a center has both demands multiplied by ``factor``, so cells in
        overlapping zones are multiplied once per zone.
        """
        if realization.level != "cell":
            raise ValueError("outbreaks apply to cell-level realizations")
        if k <= 0:
            return realization
        rng = np.random.default_rng([seed, OUTBREAK_STREAM, realization.id])
        coords = np.array([cell.coord for cell in cells], dtype=float)
        centers = rng.choice(len(cells), size=min(k, len(cells)), replace=False)

        multiplier = np.ones(len(cells), dtype=np.int64)
        for center in centers:
            within = np.linalg.norm(coords - coords[center], axis=1) <= radius_km
            multiplier[within] *= factor
        logger.debug(f"realization {realization.id}: outbreaks at {[cells[c].id for c in centers]}")

        return realization.model_copy(
            update={
                "steerable": {cell.id: realization.steerable.get(cell.id, 0) * int(m) for cell, m in zip(cells, multiplier)},
                "walkin": {cell.id: realization.walkin.get(cell.id, 0) * int(m) for cell, m in zip(cells, multiplier)},
                "provenance": "outbreak-perturbed",
            }
        )

    @staticmethod
    def _walkin_split(
        inst: Instance, plan: Plan, realization: Realization
    ) -> Tuple[int, Dict[str, int], Dict[str, int]]:
        """(unrouted walk-ins, walk-in load per facility, capacity per facility) under the plan."""
        if realization.level != "origin":
            raise ValueError("violations are counted on origin-level realizations")
        routes = closest_routes(inst, operating_sites(inst, plan))
        caps = facility_capacities(inst, plan.sessions)
        loads = {fid: 0 for fid in caps}
        unrouted = 0
        for origin in inst.origins:
            amount = realization.walkin.get(origin.id, 0)
            fid = routes.get(origin.id)
            if fid is None:
                unrouted += amount
            else:
                loads[fid] += amount
        return unrouted, loads, caps

    def min_total_violations(self, inst: Instance, plan: Plan, realization: Realization) -> int:
        """
        Minimum total capacity violations of a plan on one realization.

        Walk-ins without an operating facility in their consideration set count in full.
        The rest is walk-in overload plus the steerable demand a max flow into the clamped
        residual capacities cannot place.
        """
        unrouted, loads, caps = self._walkin_split(inst, plan, realization)
        overload = sum(max(0, loads[fid] - caps[fid]) for fid in caps)
        residuals = ResidualCapacities(gamma={fid: max(0, caps[fid] - loads[fid]) for fid in caps})
        net = build_benders_network(inst, residuals, "realized", realization.steerable)
        unplaced = net.total_demand - max_flow(net).value
        return unrouted + overload + unplaced

    def min_total_violations_milp(self, inst: Instance, plan: Plan, realization: Realization) -> int:
        """Same metric from the direct minimum-overage assignment MILP."""
        if self.backend is None:
            raise ValueError("the violations MILP needs a backend")
        backend = self.backend
        unrouted, loads, caps = self._walkin_split(inst, plan, realization)

        handle = backend.new_model("min", f"violations-{inst.name}-{realization.id}")
        over = {fid: backend.add_var(handle, f"over[{fid}]", 0, None) for fid in caps}
        incoming: Dict[str, Dict[str, float]] = {fid: {} for fid in caps}
        constant = unrouted
        for origin in inst.origins:
            demand = realization.steerable.get(origin.id, 0)
            if not origin.consideration:
                constant += demand
                continue
            row: Dict[str, float] = {}
            for fid in origin.facility_ids:
                z = backend.add_var(handle, f"z[{origin.id},{fid}]", 0, None, integer=True)
                row[z] = 1.0
                incoming[fid][z] = 1.0
            backend.add_linear_constraint(handle, row, "==", demand, f"assign[{origin.id}]")
        for fid in caps:
            backend.add_linear_constraint(
                handle, {**incoming[fid], over[fid]: -1.0}, "<=", caps[fid] - loads[fid], f"capacity[{fid}]"
            )
        backend.set_objective(handle, {var: 1.0 for var in over.values()}, constant=constant)

        outcome = backend.solve(handle)
        if outcome.status != "optimal":
            raise RuntimeError(f"violations MILP ended with status {outcome.status}")
        return int(round(outcome.objective))

    def certify_plan(self, inst: Instance, plan: Plan, realizations: Sequence[Realization]) -> int:
        """Number of realizations on which the plan has any violation."""
        failures = [r.id for r in realizations if self.min_total_violations(inst, plan, r) > 0]
        if failures:
            logger.info(f"plan fails on {len(failures)} of {len(realizations)} realizations, first ids {failures[:5]}")
        return len(failures)

    def evaluate_models(
        self,
        inst: Instance,
        plans: Mapping[str, Plan],
        realizations: Sequence[Realization],
        cells: Optional[Sequence[Cell]] = None,
    ) -> EvaluationReport:
        """
        Score every plan on every realization.

        Args:
            inst: Instance shared by all plans
            plans: Model name -> plan
            realizations: Origin-level realizations, or cell-level ones together with ``cells``
            cells: Generator cells for aggregating cell-level realizations

        Returns:
            EvaluationReport with per-realization rows, per-model summary and ECDF points
        """
        origin_level = []
        for realization in realizations:
            if realization.level == "cell":
                if cells is None:
                    raise ValueError("cell-level realizations need the generator cells")
                realization = aggregate_realization(inst, cells, realization)
            origin_level.append(realization)

        rows = [
            ViolationRow(model=model, realization_id=r.id, violations=self.min_total_violations(inst, plan, r))
            for model, plan in plans.items()
            for r in origin_level
        ]
        frame = pd.DataFrame([row.model_dump() for row in rows], columns=["model", "realization_id", "violations"])

        summary: List[ModelSummary] = []
        ecdf: List[EcdfPoint] = []
        for model, plan in plans.items():
            values = frame.loc[frame["model"] == model, "violations"]
            summary.append(
                ModelSummary(
                    model=model,
                    mean=float(values.mean()),
                    max=int(values.max()),
                    p95=float(values.quantile(0.95)),
                    cost=plan.cost if plan.cost is not None else plan_cost(inst, plan),
                )
            )
            counts = values.value_counts().sort_index()
            cumulative = counts.cumsum() / len(values)
            ecdf.extend(EcdfPoint(model=model, violations=int(v), cdf=float(c)) for v, c in cumulative.items())
            logger.info(f"{model}: mean violations {values.mean():.3f}, max {int(values.max())}")

        return EvaluationReport(rows=rows, summary=summary, ecdf=ecdf)

    def emit_report(self, report: EvaluationReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
        """Write violations.csv, summary.csv and ecdf.csv into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tables = {
            "violations": (report.rows, ["model", "realization_id", "violations"]),
            "summary": (report.summary, ["model", "mean", "max", "p95", "cost"]),
            "ecdf": (report.ecdf, ["model", "violations", "cdf"]),
        }
        paths: Dict[str, Path] = {}
        for name, (items, columns) in tables.items():
            path = out_dir / f"{name}.csv"
            pd.DataFrame([item.model_dump() for item in items], columns=columns).to_csv(path, index=False)
            paths[name] = path
        return paths
