"""
Synthetic instance generator.

Cells sit on a jittered grid, facilities are scattered uniformly over the region, and
weekly primary-care visits per cell follow a negative binomial around a gamma-mixed
cell mean. Nominal demands, bounds and budgets are derived from the weekly history;
cells sharing the same ordered consideration set are merged into one demand origin.
"""

import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..models import (
    Cell,
    ConsiderationEntry,
    DemandHistory,
    DemandOrigin,
    GeneratorConfig,
    Instance,
    Practice,
    Site,
    UncertaintyModel,
)

logger = logging.getLogger(__name__)

GEOMETRY_STREAM = 0
HISTORY_STREAM = 1

DEMAND_FIELDS = ("steerable_nominal", "walkin_nominal", "steerable_lo", "steerable_hi", "walkin_lo", "walkin_hi")


def round_half_up(x: float) -> int:
    """round(x) = floor(x + 0.5), not banker's rounding."""
    return int(np.floor(x + 0.5))


def derive_demands(history: DemandHistory, omega: float) -> Dict[str, Dict[str, int]]:
    """
    Nominal demands and bounds per history key.

    Walk-ins take the share omega of the average, minimum and maximum weekly visits; the
    steerable demand is the remainder.

    Args:
        history: Weekly visit counts
        omega: Walk-in fraction in [0, 1]

    Returns:
        key -> {steerable_nominal, walkin_nominal, steerable_lo, steerable_hi, walkin_lo, walkin_hi}
    """
    if history.weeks == 0:
        raise ValueError("demand history is empty")
    demands: Dict[str, Dict[str, int]] = {}
    for key, series in history.weekly.items():
        weekly = np.asarray(series, dtype=float)
        avg = round_half_up(weekly.mean())
        low = int(weekly.min())
        high = int(weekly.max())
        u = round_half_up(omega * avg)
        sigma = round_half_up(omega * low)
        tau = round_half_up(omega * high)
        demands[key] = {
            "steerable_nominal": avg - u,
            "walkin_nominal": u,
            "steerable_lo": low - sigma,
            "steerable_hi": high - tau,
            "walkin_lo": sigma,
            "walkin_hi": tau,
        }
    return demands


def derive_budgets(history: DemandHistory, omega: float) -> Tuple[int, int]:
    """(Gamma1, Gamma2) from the largest weekly total demand M: Gamma2 = round(omega M), Gamma1 = M - Gamma2."""
    if history.weeks == 0:
        raise ValueError("demand history is empty")
    totals = np.asarray(list(history.weekly.values()), dtype=np.int64).sum(axis=0)
    peak = int(totals.max())
    gamma_walkin = round_half_up(omega * peak)
    return peak - gamma_walkin, gamma_walkin


def clamp_budgets(
    origins: List[DemandOrigin], gamma_steerable: int, gamma_walkin: int
) -> Tuple[int, int, List[str]]:
    """Move the budgets into [max(sum lo, sum nominal), sum hi] so the nominal vector lies in the sets."""
    clamps: List[str] = []
    bounds = {
        "gamma_steerable": (
            gamma_steerable,
            max(sum(o.steerable_lo for o in origins), sum(o.steerable_nominal for o in origins)),
            sum(o.steerable_hi for o in origins),
        ),
        "gamma_walkin": (
            gamma_walkin,
            max(sum(o.walkin_lo for o in origins), sum(o.walkin_nominal for o in origins)),
            sum(o.walkin_hi for o in origins),
        ),
    }
    clamped = {}
    for name, (value, lower, upper) in bounds.items():
        new = min(max(value, lower), upper)
        if new != value:
            message = f"{name} {value} -> {new} (allowed {lower}..{upper})"
            logger.warning(f"clamped budget {message}")
            clamps.append(message)
        clamped[name] = new
    return clamped["gamma_steerable"], clamped["gamma_walkin"], clamps


class InstanceGenerator:
    """Seeded generator of planning instances and their pre-aggregation cells."""

    def __init__(self, config: Optional[GeneratorConfig] = None):
        self.config = config or GeneratorConfig()

    def _rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, stream])

    def generate_geometry(self) -> Tuple[List[Cell], List[Site], List[Practice], np.ndarray]:
        """
        Cells, facilities and the cell-to-facility driving distances in meters.

        Returns:
            (cells, sites, practices, distances) with distances shaped (cells, sites + practices)
        """
        cfg = self.config
        if cfg.n_sites + cfg.n_practices == 0:
            raise ValueError("an instance needs at least one site or practice")
        rng = self._rng(GEOMETRY_STREAM)

        side = int(np.ceil(np.sqrt(cfg.n_cells)))
        spacing = cfg.extent_km / side
        grid = np.array([(col, row) for row in range(side) for col in range(side)][: cfg.n_cells], dtype=float)
        jitter = rng.uniform(-spacing / 4, spacing / 4, size=grid.shape)
        cell_xy = (grid + 0.5) * spacing + jitter

        heterogeneity = cfg.mean_heterogeneity
        if heterogeneity > 0:
            shape = 1.0 / heterogeneity**2
            means = cfg.demand_mean * rng.gamma(shape, 1.0 / shape, size=cfg.n_cells)
        else:
            means = np.full(cfg.n_cells, cfg.demand_mean)

        site_xy = rng.uniform(0, cfg.extent_km, size=(cfg.n_sites, 2))
        practice_xy = rng.uniform(0, cfg.extent_km, size=(cfg.n_practices, 2))
        lo, hi = cfg.practice_capacity_range
        capacities = rng.integers(lo, hi + 1, size=cfg.n_practices)

        cells = [
            Cell(id=f"c{i + 1}", coord=(round(float(x), 4), round(float(y), 4)), mean=float(m))
            for i, ((x, y), m) in enumerate(zip(cell_xy, means))
        ]
        sites = [
            Site(
                id=f"l{i + 1}",
                setup_cost=cfg.site_setup_cost,
                session_cap=cfg.site_session_cap,
                coord=(round(float(x), 4), round(float(y), 4)),
            )
            for i, (x, y) in enumerate(site_xy)
        ]
        practices = [
            Practice(id=f"p{i + 1}", capacity=int(cap), coord=(round(float(x), 4), round(float(y), 4)))
            for i, ((x, y), cap) in enumerate(zip(practice_xy, capacities))
        ]

        facility_xy = np.vstack([site_xy, practice_xy])
        euclid = np.linalg.norm(cell_xy[:, None, :] - facility_xy[None, :, :], axis=2)
        distances = np.floor(euclid * cfg.road_detour_factor * 1000 + 0.5).astype(np.int64)
        logger.debug(f"geometry: {len(cells)} cells, {len(sites)} sites, {len(practices)} practices")
        return cells, sites, practices, distances

    def simulate_weekly_demands(self, cells: List[Cell]) -> DemandHistory:
        """Independent weekly visits per cell: negative binomial with the cell mean, Poisson without dispersion."""
        cfg = self.config
        rng = self._rng(HISTORY_STREAM)
        means = np.array([cell.mean for cell in cells], dtype=float)
        draws = sample_weekly_visits(rng, means, cfg.weeks, cfg.dispersion)
        return DemandHistory(weekly={cell.id: [int(v) for v in row] for cell, row in zip(cells, draws)})

    def aggregate_cells(
        self,
        cells: List[Cell],
        facility_ids: List[str],
        distances: np.ndarray,
        cell_demands: Mapping[str, Mapping[str, int]],
    ) -> Tuple[List[DemandOrigin], List[Cell]]:
        """
        Merge cells with identical ordered consideration sets into demand origins.

        A cell considers every facility within the maximum driving distance, ordered by
        (distance, facility id). Demands of merged cells are summed; the origin keeps the
        distances and coordinate of its first cell.

        Args:
            cells: Cells in generation order
            facility_ids: Column labels of ``distances``
            distances: Driving distances in meters, shaped (cells, facilities)
            cell_demands: Derived demand fields per cell id

        Returns:
            (origins, cells with origin_id set)
        """
        limit_m = self.config.max_distance_km * 1000
        groups: Dict[Tuple[str, ...], Dict] = {}
        tagged: List[Cell] = []
        for i, cell in enumerate(cells):
            entries = sorted(
                (int(distances[i, k]), fid) for k, fid in enumerate(facility_ids) if distances[i, k] <= limit_m
            )
            key = tuple(fid for _, fid in entries)
            if key not in groups:
                groups[key] = {
                    "id": f"v{len(groups) + 1}",
                    "entries": entries,
                    "coord": cell.coord,
                    "demand": dict.fromkeys(DEMAND_FIELDS, 0),
                }
            group = groups[key]
            for field in DEMAND_FIELDS:
                group["demand"][field] += int(cell_demands[cell.id][field])
            tagged.append(cell.model_copy(update={"origin_id": group["id"]}))

        origins = [
            DemandOrigin(
                id=group["id"],
                consideration=[ConsiderationEntry(facility_id=fid, distance_m=dist) for dist, fid in group["entries"]],
                coord=group["coord"],
                **group["demand"],
            )
            for group in groups.values()
        ]
        uncovered = [o.id for o in origins if not o.consideration]
        if uncovered:
            logger.warning(
                f"{len(uncovered)} origins have no facility within {self.config.max_distance_km} km: {uncovered[:5]}"
            )
        logger.info(f"aggregated {len(cells)} cells into {len(origins)} origins")
        return origins, tagged

    def generate(self) -> Tuple[Instance, List[Cell]]:
        """
        Run the whole pipeline: geometry, weekly history, derived demands and budgets, aggregation.

        Returns:
            (instance, cells) where cells map back to their origin for the evaluator
        """
        cfg = self.config
        cells, sites, practices, distances = self.generate_geometry()
        history = self.simulate_weekly_demands(cells)
        cell_demands = derive_demands(history, cfg.walkin_fraction)
        facility_ids = [s.id for s in sites] + [p.id for p in practices]
        origins, cells = self.aggregate_cells(cells, facility_ids, distances, cell_demands)

        metadata = {
            "generator": cfg.model_dump(mode="json"),
            "n_cells": len(cells),
            "demand_field": "gamma-mixed negative binomial weekly visits per cell (synthetic proxy)",
        }
        if cfg.uncertainty == "budgeted":
            gamma_steerable, gamma_walkin = derive_budgets(history, cfg.walkin_fraction)
            gamma_steerable, gamma_walkin, clamps = clamp_budgets(origins, gamma_steerable, gamma_walkin)
            if clamps:
                metadata["budget_clamps"] = clamps
            uncertainty = UncertaintyModel(kind="budgeted", gamma_steerable=gamma_steerable, gamma_walkin=gamma_walkin)
        else:
            uncertainty = UncertaintyModel(kind=cfg.uncertainty)

        inst = Instance(
            name=f"gen-s{cfg.seed}-d{cfg.max_distance_km:g}-w{cfg.walkin_fraction:g}",
            sites=sites,
            practices=practices,
            origins=origins,
            session_cost=cfg.session_cost,
            session_capacity=cfg.session_capacity,
            uncertainty=uncertainty,
            metadata=metadata,
        )
        logger.info(
            f"generated '{inst.name}': {len(origins)} origins, "
            f"steerable {sum(o.steerable_nominal for o in origins)}, walk-in {sum(o.walkin_nominal for o in origins)}"
        )
        return inst, cells


def sample_weekly_visits(
    rng: np.random.Generator, means: np.ndarray, weeks: int, dispersion: Optional[float]
) -> np.ndarray:
    """Visit counts shaped (len(means), weeks); zero-mean rows stay zero."""
    means = np.asarray(means, dtype=float)
    draws = np.zeros((len(means), weeks), dtype=np.int64)
    active = means > 0
    if not active.any():
        return draws
    if dispersion is None:
        draws[active] = rng.poisson(means[active][:, None], size=(int(active.sum()), weeks))
    else:
        p = dispersion / (dispersion + means[active])
        draws[active] = rng.negative_binomial(dispersion, p[:, None], size=(int(active.sum()), weeks))
    return draws
