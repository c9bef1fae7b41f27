"""
Robust planning under interval and budgeted demand uncertainty.

Interval uncertainty reduces to the deterministic problem at the upper bounds. Budgeted
uncertainty bounds the total steerable and walk-in demand (Gamma1, Gamma2) inside the
boxes; its Benders master carries one block of dual variables per registered origin
subset, and new subsets come from a separation MIP run at master optimality.
"""

import logging
import time
from typing import Dict, Iterable, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..backends import BaseBackend
from ..exceptions import AssumptionViolationError, InfeasiblePlanError, SizeGuardError
from ..models import (
    ConsiderationEntry,
    DemandOrigin,
    Instance,
    Plan,
    Practice,
    SeparationResult,
    SolveResult,
    UncertaintyModel,
)
from ..utils.maxflow import build_benders_network, max_flow, recover_assignment, residual_capacities
from .benders import BendersSolver, MasterModel, Separation, build_master, canonical, neighbourhood
from .compact import CompactSolver
from .formulation import extract_plan

logger = logging.getLogger(__name__)

BRUTEFORCE_MAX_ORIGINS = 20
CHUNK = 1 << 14
ZERO_TOL = 1e-6


def _budgets(inst: Instance) -> Tuple[int, int]:
    unc = inst.uncertainty
    if unc.kind != "budgeted" or unc.gamma_steerable is None or unc.gamma_walkin is None:
        raise ValueError(f"instance '{inst.name}' has no budgeted uncertainty configured")
    return unc.gamma_steerable, unc.gamma_walkin


def worst_case_steerable(inst: Instance, subset: Iterable[str]) -> int:
    """Largest total steerable demand of U over the budgeted set."""
    gamma, _ = _budgets(inst)
    members = set(subset)
    upper = sum(o.steerable_hi for o in inst.origins if o.id in members)
    outside = sum(o.steerable_lo for o in inst.origins if o.id not in members)
    return min(upper, gamma - outside)


def worst_case_walkin(inst: Instance, subset: Iterable[str], walkin_route: Mapping[str, Optional[str]]) -> int:
    """Largest total walk-in demand routed into N(U) over the budgeted set."""
    _, gamma = _budgets(inst)
    facilities = neighbourhood(inst, subset)
    inside = [o for o in inst.origins if walkin_route.get(o.id) in facilities]
    inside_ids = {o.id for o in inside}
    upper = sum(o.walkin_hi for o in inside)
    outside = sum(o.walkin_lo for o in inst.origins if o.id not in inside_ids)
    return min(upper, gamma - outside)


def worst_case_copy(inst: Instance) -> Instance:
    """Deterministic copy with nominal demands at the upper bounds."""
    origins = [
        o.model_copy(
            update={
                "steerable_nominal": o.steerable_hi,
                "steerable_lo": o.steerable_hi,
                "walkin_nominal": o.walkin_hi,
                "walkin_lo": o.walkin_hi,
            }
        )
        for o in inst.origins
    ]
    return inst.model_copy(
        update={
            "origins": origins,
            "uncertainty": UncertaintyModel(kind="deterministic"),
            "metadata": {**inst.metadata, "worst_case_of": inst.name},
        }
    )


def neighbourhood_capacity(inst: Instance, facilities: Iterable[str], sessions: Mapping[str, int]) -> int:
    site_ids = {s.id for s in inst.sites}
    practice_caps = {p.id: p.capacity for p in inst.practices}
    return sum(
        inst.session_capacity * int(sessions.get(fid, 0)) if fid in site_ids else practice_caps[fid]
        for fid in facilities
    )


def budgeted_cut_slack(
    inst: Instance, subset: Iterable[str], sessions: Mapping[str, int], walkin_route: Mapping[str, Optional[str]]
) -> int:
    """Capacity of N(U) minus the worst-case steerable and walk-in demand it has to absorb."""
    members = set(subset)
    capacity = neighbourhood_capacity(inst, neighbourhood(inst, members), sessions)
    return capacity - worst_case_steerable(inst, members) - worst_case_walkin(inst, members, walkin_route)


def build_subsetsum_reduction(values: Sequence[int], target: int) -> Tuple[Instance, Dict[str, int], Dict[str, Optional[str]]]:
    """
    Separation instance that has a violated subset exactly when some subset of ``values`` sums to ``target``.

    Origin v_i may use practice p_{n+i} (capacity a_i) or the shared practice p_{2n+1}
    (capacity B-1); its steerable demand ranges over [0, 2 a_i] with a total budget of min(2B, 2 sum(a)).
    When 2B exceeds 2 sum(a) the budget is the sum of the upper bounds, every subset
    sums to less than B and the verdict is "no" either way.
    There are no sites, so the returned first stage is empty and every origin routes to
    its own practice.

    Args:
        values: Positive integers a_1..a_n
        target: Target sum B >= 1

    Returns:
        (instance, sessions, walk-in routing)
    """
    if not values:
        raise ValueError("values must not be empty")
    if any(a <= 0 for a in values):
        raise ValueError(f"values must be positive, got {list(values)}")
    if target < 1:
        raise ValueError(f"target must be at least 1, got {target}")

    n = len(values)
    shared = f"p{2 * n + 1}"
    practices = [Practice(id=f"p{n + i}", capacity=a) for i, a in enumerate(values, start=1)]
    practices.append(Practice(id=shared, capacity=target - 1))
    origins = [
        DemandOrigin(
            id=f"v{i}",
            steerable_nominal=0,
            steerable_lo=0,
            steerable_hi=2 * a,
            consideration=[
                ConsiderationEntry(facility_id=f"p{n + i}", distance_m=1),
                ConsiderationEntry(facility_id=shared, distance_m=2),
            ],
        )
        for i, a in enumerate(values, start=1)
    ]
    # validation rejects a budget above the sum of upper bounds
    gamma = min(2 * target, 2 * sum(values))
    inst = Instance(
        name=f"subsetsum-n{n}-B{target}",
        practices=practices,
        origins=origins,
        session_cost=1,
        session_capacity=1,
        uncertainty=UncertaintyModel(kind="budgeted", gamma_steerable=gamma, gamma_walkin=0),
        metadata={"subset_sum": {"values": list(values), "target": target}},
    )
    route = {f"v{i}": f"p{n + i}" for i in range(1, n + 1)}
    return inst, {}, route


class RobustSolver:
    """
    Interval and budgeted robust planning.

    The budgeted loop mirrors the deterministic Benders loop but registers a dual block
    per subset and separates with a MIP instead of a max flow.
    """

    def __init__(self, backend: BaseBackend):
        self.backend = backend

    def solve_interval(
        self,
        inst: Instance,
        method: Literal["benders", "compact"] = "benders",
        separation: Separation = "mincut",
        initial_pool: Literal["empty", "singletons"] = "empty",
    ) -> SolveResult:
        """Interval-robust plan: the deterministic optimum at the upper demand bounds."""
        worst = worst_case_copy(inst)
        logger.info(f"interval model for '{inst.name}' solved as the worst-case copy with {method}")
        if method == "benders":
            return BendersSolver(self.backend).solve_benders(worst, separation, initial_pool, model_name="interval")
        if method == "compact":
            return CompactSolver(self.backend).solve_compact(worst, model_name="interval")
        raise ValueError(f"Unknown interval method: {method}")

    def build_budgeted_master(self, inst: Instance) -> MasterModel:
        _budgets(inst)
        return build_master(self.backend, inst, "budgeted")

    def add_cut_block(self, master: MasterModel, inst: Instance, subset: Iterable[str]) -> Tuple[str, ...]:
        """Register U: a fresh dual block for the walk-in worst case plus the capacity row of N(U)."""
        key = canonical(subset)
        if key in master.cut_pool:
            raise ValueError(f"cut block for U={list(key)} is already registered")

        backend, handle, pv = self.backend, master.handle, master.pv
        _, gamma_walkin = _budgets(inst)
        index = len(master.cut_pool)
        facilities = neighbourhood(inst, key)

        rho = backend.add_var(handle, f"rho_U[{index}]", 0, None)
        row: Dict[str, float] = {rho: float(gamma_walkin)}
        block = {"rho": rho}
        for origin in inst.origins:
            eps = backend.add_var(handle, f"eps_U[{index},{origin.id}]", 0, None)
            kap = backend.add_var(handle, f"kap_U[{index},{origin.id}]", 0, None)
            block[f"eps[{origin.id}]"] = eps
            block[f"kap[{origin.id}]"] = kap
            row[eps] = float(origin.walkin_hi)
            row[kap] = -float(origin.walkin_lo)
            dual_row = {eps: 1.0, kap: -1.0, rho: 1.0}
            for fid in origin.walkin_facility_ids:
                if fid in facilities:
                    dual_row[pv.w[(origin.id, fid)]] = -1.0
            backend.add_linear_constraint(handle, dual_row, ">=", 0, f"dual_U[{index},{origin.id}]")

        constant = 0
        practice_caps = {p.id: p.capacity for p in inst.practices}
        for fid in facilities:
            if fid in pv.x:
                row[pv.x[fid]] = row.get(pv.x[fid], 0.0) - inst.session_capacity
            else:
                constant += practice_caps[fid]
        backend.add_linear_constraint(
            handle, row, "<=", constant - worst_case_steerable(inst, key), f"robust_cut[{index}]"
        )
        master.cut_pool.append(key)
        master.blocks[key] = block
        return key

    def separate_budgeted_mip(
        self, inst: Instance, sessions: Mapping[str, int], walkin_route: Mapping[str, Optional[str]]
    ) -> SeparationResult:
        """
        Most violated subset through the separation MIP.

        o_v selects U, n_k marks N(U), r_v marks origins routed into N(U), and d1, d2 are the
        worst-case steerable and walk-in totals. The verdict comes from recomputing the exact
        slack of the extracted subset.
        """
        gamma1, gamma2 = _budgets(inst)
        backend = self.backend
        handle = backend.new_model("max", f"sep-budgeted-{inst.name}")

        o = {v.id: backend.add_var(handle, f"o[{v.id}]", 0, 1, integer=True) for v in inst.origins}
        n = {f.id: backend.add_var(handle, f"n[{f.id}]", 0, 1, integer=True) for f in [*inst.sites, *inst.practices]}
        r = {
            v.id: backend.add_var(handle, f"r[{v.id}]", 0, 1 if walkin_route.get(v.id) else 0, integer=True)
            for v in inst.origins
        }
        d1 = backend.add_var(handle, "d1", 0, None)
        d2 = backend.add_var(handle, "d2", 0, None)

        steerable_from = inst.steerable_neighbors()
        for v in inst.origins:
            for fid in v.facility_ids:
                backend.add_linear_constraint(handle, {n[fid]: 1, o[v.id]: -1}, ">=", 0)
            fid = walkin_route.get(v.id)
            if fid:
                row = {r[v.id]: 1.0}
                for other in steerable_from.get(fid, []):
                    row[o[other]] = row.get(o[other], 0.0) - 1.0
                backend.add_linear_constraint(handle, row, "<=", 0, f"routed[{v.id}]")

        sum_alpha = sum(v.steerable_lo for v in inst.origins)
        sum_sigma = sum(v.walkin_lo for v in inst.origins)
        backend.add_linear_constraint(handle, {d1: 1, **{o[v.id]: -float(v.steerable_hi) for v in inst.origins}}, "<=", 0)
        backend.add_linear_constraint(
            handle, {d1: 1, **{o[v.id]: -float(v.steerable_lo) for v in inst.origins}}, "<=", gamma1 - sum_alpha
        )
        backend.add_linear_constraint(handle, {d2: 1, **{r[v.id]: -float(v.walkin_hi) for v in inst.origins}}, "<=", 0)
        backend.add_linear_constraint(
            handle, {d2: 1, **{r[v.id]: -float(v.walkin_lo) for v in inst.origins}}, "<=", gamma2 - sum_sigma
        )

        site_ids = {s.id for s in inst.sites}
        practice_caps = {p.id: p.capacity for p in inst.practices}
        objective = {d1: 1.0, d2: 1.0}
        for fid, var in n.items():
            cap = inst.session_capacity * int(sessions.get(fid, 0)) if fid in site_ids else practice_caps[fid]
            objective[var] = -float(cap)
        backend.set_objective(handle, objective)

        outcome = backend.solve(handle)
        if not outcome.has_values:
            raise RuntimeError(f"separation MIP for '{inst.name}' ended with status {outcome.status}")
        value = outcome.objective or 0.0
        subset = sorted(vid for vid, var in o.items() if outcome.value(var) > 1 - ZERO_TOL)
        slack = budgeted_cut_slack(inst, subset, sessions, walkin_route)
        return SeparationResult(
            violated=slack < 0,
            subset_U=subset,
            violation=slack,
            value=value,
            witness={
                "o": {vid: outcome.rounded(var) for vid, var in o.items()},
                "r": {vid: outcome.rounded(var) for vid, var in r.items()},
                "n": {fid: outcome.rounded(var) for fid, var in n.items()},
                "d1": outcome.value(d1),
                "d2": outcome.value(d2),
            },
        )

    def separate_budgeted_bruteforce(
        self, inst: Instance, sessions: Mapping[str, int], walkin_route: Mapping[str, Optional[str]]
    ) -> SeparationResult:
        return separate_budgeted_bruteforce(inst, sessions, walkin_route)

    def solve_budgeted(self, inst: Instance, model_name: str = "budgeted") -> SolveResult:
        """
        Constraint generation over cut blocks.

        Args:
            inst: Instance with budgeted uncertainty (or its session expansion)
            model_name: Label recorded on the result

        Returns:
            SolveResult; iterations count the registered cut blocks
        """
        start = time.process_time()
        master = self.build_budgeted_master(inst)
        iteration = 0
        while True:
            outcome = self.backend.solve(master.handle)
            if outcome.status in ("infeasible", "unbounded"):
                logger.info(f"budgeted master for '{inst.name}' is {outcome.status} after {iteration} cut blocks")
                return SolveResult(
                    model=model_name,
                    status="infeasible",
                    iterations=iteration,
                    cuts=[list(c) for c in master.cut_pool],
                    runtime_s=time.process_time() - start,
                )
            if not outcome.has_values:
                logger.error(f"budgeted master for '{inst.name}' stopped without an incumbent")
                return SolveResult(model=model_name, status="limit", iterations=iteration, runtime_s=time.process_time() - start)

            plan = extract_plan(inst, master.pv, outcome)
            result = self.separate_budgeted_mip(inst, plan.sessions, plan.walkin_route)
            objective = int(round(outcome.objective))
            logger.info(
                f"iter={iteration} obj={objective} violated_U_size={len(result.subset_U) if result.violated else 0} "
                f"slack={result.violation} sep_value={result.value:g}"
            )
            if outcome.status == "limit":
                logger.warning(f"budgeted master for '{inst.name}' hit a limit; returning the incumbent unverified")
                return SolveResult(
                    model=model_name,
                    status="limit",
                    objective=objective,
                    plan=plan,
                    iterations=iteration,
                    cuts=[list(c) for c in master.cut_pool],
                    runtime_s=time.process_time() - start,
                )
            if not result.violated:
                break
            if master.has_cut(result.subset_U):
                raise RuntimeError(f"separation returned the registered subset {result.subset_U} again")
            self.add_cut_block(master, inst, result.subset_U)
            iteration += 1

        return SolveResult(
            model=model_name,
            status="optimal",
            objective=objective,
            plan=self._nominal_assignment(inst, plan),
            iterations=iteration,
            cuts=[list(c) for c in master.cut_pool],
            runtime_s=time.process_time() - start,
        )

    @staticmethod
    def _nominal_assignment(inst: Instance, plan: Plan) -> Plan:
        """Attach the steerable assignment of the nominal demands when they can be routed."""
        try:
            residuals = residual_capacities(inst, plan.sessions, plan.walkin_route, "nominal")
            net = build_benders_network(inst, residuals, "nominal")
            assignment = recover_assignment(inst, net, max_flow(net))
        except (AssumptionViolationError, InfeasiblePlanError) as e:
            logger.warning(f"robust plan for '{inst.name}' has no nominal assignment: {e}")
            return plan
        return plan.model_copy(update={"steerable_assign": assignment})


def separate_budgeted_bruteforce(
    inst: Instance, sessions: Mapping[str, int], walkin_route: Mapping[str, Optional[str]]
) -> SeparationResult:
    """
    Enumerate every origin subset and return the one with the smallest budgeted cut slack.

    Subsets are evaluated in chunks of bitmasks with numpy; ties go to the smallest mask.
    """
    gamma1, gamma2 = _budgets(inst)
    n_origins = len(inst.origins)
    if n_origins > BRUTEFORCE_MAX_ORIGINS:
        raise SizeGuardError(
            f"brute-force separation enumerates 2^{n_origins} subsets; limit is {BRUTEFORCE_MAX_ORIGINS} origins"
        )

    facilities = [f.id for f in [*inst.sites, *inst.practices]]
    index = {fid: k for k, fid in enumerate(facilities)}
    site_ids = {s.id for s in inst.sites}
    practice_caps = {p.id: p.capacity for p in inst.practices}
    capacity = np.array(
        [inst.session_capacity * int(sessions.get(fid, 0)) if fid in site_ids else practice_caps[fid] for fid in facilities],
        dtype=np.int64,
    )
    incidence = np.zeros((n_origins, len(facilities)), dtype=np.int64)
    for i, origin in enumerate(inst.origins):
        for fid in origin.facility_ids:
            incidence[i, index[fid]] = 1

    alpha = np.array([o.steerable_lo for o in inst.origins], dtype=np.int64)
    beta = np.array([o.steerable_hi for o in inst.origins], dtype=np.int64)
    sigma = np.array([o.walkin_lo for o in inst.origins], dtype=np.int64)
    tau = np.array([o.walkin_hi for o in inst.origins], dtype=np.int64)
    routed = np.array([index.get(walkin_route.get(o.id) or "", -1) for o in inst.origins], dtype=np.int64)
    has_route = routed >= 0
    bit = np.arange(n_origins, dtype=np.int64)

    best_slack: Optional[int] = None
    best_mask = 0
    total = 1 << n_origins
    for lo in range(0, total, CHUNK):
        masks = np.arange(lo, min(total, lo + CHUNK), dtype=np.int64)
        members = (masks[:, None] >> bit) & 1
        covered = (members @ incidence) > 0
        steerable = np.minimum(members @ beta, gamma1 - alpha.sum() + members @ alpha)
        inside = np.zeros_like(members)
        if has_route.any():
            inside[:, has_route] = covered[:, routed[has_route]]
        walkin = np.minimum(inside @ tau, gamma2 - sigma.sum() + inside @ sigma)
        slack = covered.astype(np.int64) @ capacity - steerable - walkin
        k = int(np.argmin(slack))
        if best_slack is None or slack[k] < best_slack:
            best_slack, best_mask = int(slack[k]), int(masks[k])

    subset = sorted(origin.id for i, origin in enumerate(inst.origins) if best_mask >> i & 1)
    best_slack = best_slack if best_slack is not None else 0
    return SeparationResult(
        violated=best_slack < 0,
        subset_U=subset,
        violation=best_slack,
        value=float(-best_slack),
        witness={"subsets_checked": total},
    )
