import logging
import time
from typing import Dict, Tuple

from ..backends import BaseBackend, ModelHandle
from ..models import Instance, SolveResult
from ..utils.planning import trim_steerable_assignment
from .formulation import PlanVariables, add_plan_rows, extract_plan

logger = logging.getLogger(__name__)


class CompactModel:
    """Compact model handle with the variable maps of y, x, z and w."""

    def __init__(self, handle: ModelHandle, pv: PlanVariables, z: Dict[Tuple[str, str], str]):
        self.handle = handle
        self.pv = pv
        self.z = z

    @property
    def y(self) -> Dict[str, str]:
        return self.pv.y

    @property
    def x(self) -> Dict[str, str]:
        return self.pv.x

    @property
    def w(self) -> Dict[Tuple[str, str], str]:
        return self.pv.w


class CompactSolver:
    """
    Solves the compact formulation with explicit steerable assignment variables.

    Works unchanged on session-expanded instances, where sites are binary per session and
    the setup variable is shared by the sessions of a base site.
    """

    def __init__(self, backend: BaseBackend):
        self.backend = backend

    def build_compact(self, inst: Instance) -> CompactModel:
        backend = self.backend
        handle = backend.new_model("min", f"compact-{inst.name}")
        pv = add_plan_rows(backend, handle, inst, walkin_mode="nominal")

        z: Dict[Tuple[str, str], str] = {}
        for origin in inst.origins:
            for fid in origin.facility_ids:
                z[(origin.id, fid)] = backend.add_var(handle, f"z[{origin.id},{fid}]", 0, None, integer=True)
            backend.add_linear_constraint(
                handle,
                {z[(origin.id, fid)]: 1 for fid in origin.facility_ids},
                ">=",
                origin.steerable_nominal,
                f"demand[{origin.id}]",
            )

        steerable_from = inst.steerable_neighbors()
        walkin_from = inst.walkin_neighbors()
        origins = inst.origin_by_id()
        for facility in [*inst.sites, *inst.practices]:
            row: Dict[str, float] = {z[(vid, facility.id)]: 1 for vid in steerable_from.get(facility.id, [])}
            for vid in walkin_from.get(facility.id, []):
                row[pv.w[(vid, facility.id)]] = float(origins[vid].walkin_nominal)
            if facility.id in pv.x:
                row[pv.x[facility.id]] = -float(inst.session_capacity)
                backend.add_linear_constraint(handle, row, "<=", 0, f"capacity[{facility.id}]")
            else:
                backend.add_linear_constraint(handle, row, "<=", facility.capacity, f"capacity[{facility.id}]")

        logger.debug(
            f"compact model '{handle.name}': {len(handle.variables)} variables, {len(handle.constraints)} rows"
        )
        return CompactModel(handle, pv, z)

    def solve_compact(self, inst: Instance, model_name: str = "det-compact") -> SolveResult:
        """
        Solve the compact model to optimality.

        Args:
            inst: Validated instance (or session-expanded instance)
            model_name: Label recorded on the result

        Returns:
            SolveResult with a normalized, trimmed plan, or an infeasibility verdict
        """
        start = time.process_time()
        model = self.build_compact(inst)
        outcome = self.backend.solve(model.handle)
        runtime = time.process_time() - start

        if outcome.status in ("infeasible", "unbounded"):
            logger.info(f"compact model for '{inst.name}' is {outcome.status}")
            return SolveResult(model=model_name, status="infeasible", runtime_s=runtime)
        if not outcome.has_values:
            logger.error(f"compact model for '{inst.name}' stopped without an incumbent")
            return SolveResult(model=model_name, status="limit", runtime_s=runtime)

        plan = extract_plan(inst, model.pv, outcome)
        assign: Dict[str, Dict[str, int]] = {}
        for (vid, fid), var in model.z.items():
            assign.setdefault(vid, {})[fid] = outcome.rounded(var)
        plan = trim_steerable_assignment(inst, plan.model_copy(update={"steerable_assign": assign}))

        if outcome.status == "limit":
            logger.warning(f"compact model for '{inst.name}' hit a limit; returning the incumbent")
        return SolveResult(
            model=model_name,
            status=outcome.status,
            objective=int(round(outcome.objective)),
            plan=plan,
            runtime_s=runtime,
        )
