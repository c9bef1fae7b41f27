"""
Benders decomposition for the deterministic (and interval) planning problem.

The master keeps the setup, session and walk-in routing decisions. Steerable demand is
checked by a max-flow subproblem; when it cannot be routed, the origins on the source side
of a minimum cut give a feasibility cut over their consideration neighbourhood.
"""

import logging
import time
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Set, Tuple

from ..backends import BaseBackend, ModelHandle
from ..exceptions import AssumptionViolationError
from ..models import Instance, Plan, SeparationResult, SolveResult
from ..utils.maxflow import (
    build_benders_network,
    max_flow,
    origin_node,
    recover_assignment,
    residual_capacities,
    steerable_demands,
)
from .formulation import DemandMode, PlanVariables, add_plan_rows, extract_plan

logger = logging.getLogger(__name__)

Separation = Literal["mincut", "lp"]
AssumptionMode = Literal["deterministic", "interval", "budgeted"]

ZERO_TOL = 1e-6


class MasterModel:
    """Master problem: first-stage variables, walk-in capacity rows and the registered cut pool."""

    def __init__(self, handle: ModelHandle, pv: PlanVariables, mode: DemandMode):
        self.handle = handle
        self.pv = pv
        self.mode = mode
        self.cut_pool: List[Tuple[str, ...]] = []
        self.blocks: Dict[Tuple[str, ...], Dict[str, str]] = {}

    def has_cut(self, subset: Iterable[str]) -> bool:
        return canonical(subset) in self.cut_pool


def canonical(subset: Iterable[str]) -> Tuple[str, ...]:
    return tuple(sorted(set(subset)))


def neighbourhood(inst: Instance, subset: Iterable[str]) -> Set[str]:
    """N(U): facilities in the steerable consideration of any origin in U."""
    members = set(subset)
    return {fid for origin in inst.origins if origin.id in members for fid in origin.facility_ids}


def _capacity_coefficients(
    inst: Instance, pv: PlanVariables, facilities: Iterable[str]
) -> Tuple[Dict[str, float], int]:
    """(x coefficients, practice capacity constant) of the total capacity of ``facilities``."""
    practice_caps = {p.id: p.capacity for p in inst.practices}
    coefficients: Dict[str, float] = {}
    constant = 0
    for fid in facilities:
        if fid in pv.x:
            coefficients[pv.x[fid]] = coefficients.get(pv.x[fid], 0.0) + inst.session_capacity
        else:
            constant += practice_caps[fid]
    return coefficients, constant


def enforce_assumption1(backend: BaseBackend, master: MasterModel, inst: Instance, mode: AssumptionMode) -> None:
    """
    Keep residual capacities nonnegative for every master solution.

    Deterministic and interval modes bound the routed walk-ins (u or tau) by each facility's
    capacity. Budgeted mode bounds the worst routed walk-in load over the budget set through
    the dual of the inner maximization, one block of duals per facility.
    """
    pv = master.pv
    walkin_from = inst.walkin_neighbors()
    origins = inst.origin_by_id()

    for facility_id in [*(s.id for s in inst.sites), *(p.id for p in inst.practices)]:
        cap_row, cap_constant = _capacity_coefficients(inst, pv, [facility_id])
        routed = walkin_from.get(facility_id, [])

        if mode in ("deterministic", "interval"):
            row: Dict[str, float] = {}
            for vid in routed:
                amount = origins[vid].walkin_nominal if mode == "deterministic" else origins[vid].walkin_hi
                row[pv.w[(vid, facility_id)]] = float(amount)
            for var, coef in cap_row.items():
                row[var] = row.get(var, 0.0) - coef
            backend.add_linear_constraint(master.handle, row, "<=", cap_constant, f"assume1[{facility_id}]")
            continue

        gamma_walkin = inst.uncertainty.gamma_walkin
        if gamma_walkin is None:
            raise ValueError("budgeted walk-in capacity rows need gamma_walkin")
        rho = backend.add_var(master.handle, f"rho[{facility_id}]", 0, None)
        row = {rho: float(gamma_walkin)}
        routed_set = set(routed)
        for origin in inst.origins:
            eps = backend.add_var(master.handle, f"eps[{facility_id},{origin.id}]", 0, None)
            kap = backend.add_var(master.handle, f"kap[{facility_id},{origin.id}]", 0, None)
            row[eps] = float(origin.walkin_hi)
            row[kap] = -float(origin.walkin_lo)
            dual_row = {eps: 1.0, kap: -1.0, rho: 1.0}
            if origin.id in routed_set:
                dual_row[pv.w[(origin.id, facility_id)]] = -1.0
            backend.add_linear_constraint(master.handle, dual_row, ">=", 0, f"assume1dual[{facility_id},{origin.id}]")
        for var, coef in cap_row.items():
            row[var] = row.get(var, 0.0) - coef
        backend.add_linear_constraint(master.handle, row, "<=", cap_constant, f"assume1[{facility_id}]")


def build_master(backend: BaseBackend, inst: Instance, mode: DemandMode = "nominal") -> MasterModel:
    """Master with the structural and walk-in capacity rows; the cut pool starts empty."""
    handle = backend.new_model("min", f"master-{mode}-{inst.name}")
    pv = add_plan_rows(backend, handle, inst, walkin_mode=mode)
    master = MasterModel(handle, pv, mode)
    assumption = {"nominal": "deterministic", "interval": "interval", "budgeted": "budgeted"}[mode]
    enforce_assumption1(backend, master, inst, assumption)
    return master


def add_feasibility_cut(
    backend: BaseBackend, master: MasterModel, inst: Instance, subset: Iterable[str], demand_mode: DemandMode = "nominal"
) -> Tuple[str, ...]:
    """Register the feasibility cut of origin subset U; duplicates are rejected."""
    key = canonical(subset)
    if key in master.cut_pool:
        raise ValueError(f"cut for U={list(key)} is already registered")

    pv = master.pv
    members = set(key)
    facilities = neighbourhood(inst, members)
    steerable = steerable_demands(inst, "nominal" if demand_mode == "nominal" else "interval")
    row, cap_constant = _capacity_coefficients(inst, pv, facilities)

    walkin_from = inst.walkin_neighbors()
    origins = inst.origin_by_id()
    for fid in facilities:
        for vid in walkin_from.get(fid, []):
            amount = origins[vid].walkin_nominal if demand_mode == "nominal" else origins[vid].walkin_hi
            var = pv.w[(vid, fid)]
            row[var] = row.get(var, 0.0) - amount

    rhs = sum(steerable[vid] for vid in members) - cap_constant
    backend.add_linear_constraint(master.handle, row, ">=", rhs, f"cut{len(master.cut_pool)}")
    master.cut_pool.append(key)
    return key


def evaluate_cut(
    inst: Instance,
    subset: Iterable[str],
    sessions: Mapping[str, int],
    walkin_route: Mapping[str, Optional[str]],
    demand_mode: DemandMode = "nominal",
) -> int:
    """Slack (right minus left side) of the feasibility cut of U at a fixed first stage."""
    members = set(subset)
    facilities = neighbourhood(inst, members)
    site_ids = {s.id for s in inst.sites}
    practice_caps = {p.id: p.capacity for p in inst.practices}

    capacity = sum(
        inst.session_capacity * int(sessions.get(fid, 0)) if fid in site_ids else practice_caps[fid]
        for fid in facilities
    )
    demand = 0
    walkins = 0
    for origin in inst.origins:
        if origin.id in members:
            demand += origin.steerable_nominal if demand_mode == "nominal" else origin.steerable_hi
        if walkin_route.get(origin.id) in facilities:
            walkins += origin.walkin_nominal if demand_mode == "nominal" else origin.walkin_hi
    return capacity - demand - walkins


def separate_mincut(
    inst: Instance,
    sessions: Mapping[str, int],
    walkin_route: Mapping[str, Optional[str]],
    demand_mode: DemandMode = "nominal",
) -> SeparationResult:
    """Violated cut from the source side of a minimum s-t cut, if the max flow falls short."""
    residuals = residual_capacities(inst, sessions, walkin_route, demand_mode)
    net = build_benders_network(inst, residuals, demand_mode)
    result = max_flow(net)
    if result.value >= net.total_demand:
        return SeparationResult(violated=False, witness={"flow_value": result.value})

    subset = sorted(o.id for o in inst.origins if origin_node(o.id) in result.source_side)
    slack = evaluate_cut(inst, subset, sessions, walkin_route, demand_mode)
    return SeparationResult(
        violated=slack < 0,
        subset_U=subset,
        violation=slack,
        value=float(net.total_demand - result.value),
        witness={
            "flow_value": result.value,
            "source_side": sorted(str(node) for node in result.source_side),
        },
    )


def separate_lp(
    backend: BaseBackend,
    inst: Instance,
    sessions: Mapping[str, int],
    walkin_route: Mapping[str, Optional[str]],
    demand_mode: DemandMode = "nominal",
) -> SeparationResult:
    """
    Separate through the linear program over origin and facility indicators.

    The program maximizes the steerable demand of a subset minus the residual capacity of
    its neighbourhood; any level set of an optimal solution is an optimal subset, so the
    most violated level set is returned.
    """
    residuals = residual_capacities(inst, sessions, walkin_route, demand_mode)
    if residuals.breaches:
        raise AssumptionViolationError(f"negative residual capacities: {residuals.breaches}")
    demands = steerable_demands(inst, "nominal" if demand_mode == "nominal" else "interval")

    handle = backend.new_model("max", f"sep-lp-{inst.name}")
    o = {origin.id: backend.add_var(handle, f"o[{origin.id}]", 0, 1) for origin in inst.origins}
    n = {fid: backend.add_var(handle, f"n[{fid}]", 0, 1) for fid in residuals.gamma}
    for origin in inst.origins:
        for fid in origin.facility_ids:
            backend.add_linear_constraint(handle, {n[fid]: 1, o[origin.id]: -1}, ">=", 0)
    objective = {o[vid]: float(d) for vid, d in demands.items()}
    objective.update({n[fid]: -float(gamma) for fid, gamma in residuals.gamma.items()})
    backend.set_objective(handle, objective)

    outcome = backend.solve(handle)
    if outcome.status != "optimal":
        logger.error(f"separation LP returned {outcome.status}; falling back to min-cut")
        return separate_mincut(inst, sessions, walkin_route, demand_mode)

    value = outcome.objective or 0.0
    duals = {vid: outcome.value(var) for vid, var in o.items()}
    if value <= ZERO_TOL:
        return SeparationResult(violated=False, value=value, witness={"o": duals})

    best: Optional[Tuple[int, List[str]]] = None
    for threshold in sorted({v for v in duals.values() if v > ZERO_TOL}, reverse=True):
        subset = sorted(vid for vid, v in duals.items() if v >= threshold - ZERO_TOL)
        slack = evaluate_cut(inst, subset, sessions, walkin_route, demand_mode)
        if best is None or slack < best[0]:
            best = (slack, subset)

    if best is None or best[0] >= 0:
        logger.warning(f"separation LP value {value:g} gave no violated level set; falling back to min-cut")
        return separate_mincut(inst, sessions, walkin_route, demand_mode)
    return SeparationResult(violated=True, subset_U=best[1], violation=best[0], value=value, witness={"o": duals})


class BendersSolver:
    """
    Cut loop for the deterministic Benders reformulation.

    Each round solves the master, separates at its optimum and adds one feasibility cut;
    the final plan gets its steerable assignment from the saturating flow.
    """

    def __init__(self, backend: BaseBackend):
        self.backend = backend

    def separate(
        self,
        inst: Instance,
        sessions: Mapping[str, int],
        walkin_route: Mapping[str, Optional[str]],
        separation: Separation = "mincut",
        demand_mode: DemandMode = "nominal",
    ) -> SeparationResult:
        if separation == "mincut":
            return separate_mincut(inst, sessions, walkin_route, demand_mode)
        if separation == "lp":
            return separate_lp(self.backend, inst, sessions, walkin_route, demand_mode)
        raise ValueError(f"Unknown separation: {separation}")

    def solve_benders(
        self,
        inst: Instance,
        separation: Separation = "mincut",
        initial_pool: Literal["empty", "singletons"] = "empty",
        model_name: str = "det-benders",
    ) -> SolveResult:
        """
        Solve by constraint generation over feasibility cuts.

        Args:
            inst: Validated instance (or session-expanded instance)
            separation: "mincut" or "lp"
            initial_pool: "empty", or "singletons" to register the cut of every origin up front
            model_name: Label recorded on the result

        Returns:
            SolveResult whose iterations count the added cuts
        """
        start = time.process_time()
        master = build_master(self.backend, inst, "nominal")
        if initial_pool == "singletons":
            for origin in inst.origins:
                if origin.steerable_nominal > 0:
                    add_feasibility_cut(self.backend, master, inst, [origin.id])
        elif initial_pool != "empty":
            raise ValueError(f"Unknown initial pool: {initial_pool}")

        iteration = 0
        while True:
            outcome = self.backend.solve(master.handle)
            if outcome.status in ("infeasible", "unbounded"):
                logger.info(f"master for '{inst.name}' is {outcome.status} after {iteration} cuts")
                return SolveResult(
                    model=model_name,
                    status="infeasible",
                    iterations=iteration,
                    cuts=[list(c) for c in master.cut_pool],
                    runtime_s=time.process_time() - start,
                )
            if not outcome.has_values:
                logger.error(f"master for '{inst.name}' stopped without an incumbent")
                return SolveResult(model=model_name, status="limit", iterations=iteration, runtime_s=time.process_time() - start)

            plan = extract_plan(inst, master.pv, outcome)
            result = self.separate(inst, plan.sessions, plan.walkin_route, separation)
            objective = int(round(outcome.objective))
            logger.info(
                f"iter={iteration} obj={objective} violated_U_size={len(result.subset_U) if result.violated else 0} "
                f"slack={result.violation}"
            )

            if outcome.status == "limit":
                logger.warning(f"master for '{inst.name}' hit a limit; returning the incumbent unverified")
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
            add_feasibility_cut(self.backend, master, inst, result.subset_U)
            iteration += 1

        plan = self._complete_plan(inst, plan)
        return SolveResult(
            model=model_name,
            status="optimal",
            objective=objective,
            plan=plan,
            iterations=iteration,
            cuts=[list(c) for c in master.cut_pool],
            runtime_s=time.process_time() - start,
        )

    @staticmethod
    def _complete_plan(inst: Instance, plan: Plan) -> Plan:
        residuals = residual_capacities(inst, plan.sessions, plan.walkin_route, "nominal")
        net = build_benders_network(inst, residuals, "nominal")
        assignment = recover_assignment(inst, net, max_flow(net))
        return plan.model_copy(update={"steerable_assign": assignment})
