"""
Formulation pieces shared by the compact model and the Benders masters: setup, session
and walk-in routing variables with the closest-facility rows, and plan extraction.
"""

import logging
from typing import Dict, Literal, Tuple

from ..backends import BaseBackend, ModelHandle, SolveOutcome
from ..models import DemandOrigin, Instance, Plan
from ..utils.planning import normalize_walkin_assignment, plan_cost

logger = logging.getLogger(__name__)

DemandMode = Literal["nominal", "interval", "budgeted"]


def walkin_bound(origin: DemandOrigin, mode: DemandMode) -> int:
    """Largest walk-in demand the origin can produce under the demand mode."""
    return origin.walkin_nominal if mode == "nominal" else origin.walkin_hi


class PlanVariables:
    """Variable names of the first-stage decisions in one model."""

    def __init__(self):
        self.y: Dict[str, str] = {}  # setup group -> var
        self.x: Dict[str, str] = {}  # site -> var
        self.w: Dict[Tuple[str, str], str] = {}  # (origin, facility) -> var
        self.operating: Dict[str, str] = {}  # site -> var walk-ins look at


def add_plan_rows(
    backend: BaseBackend,
    handle: ModelHandle,
    inst: Instance,
    walkin_mode: DemandMode = "nominal",
) -> PlanVariables:
    """
    Declare y, x, w with the setup coupling and the closest-facility rows, and set the cost objective.

    Sites of a base instance are walked into when set up (y); sites of a session-expanded
    instance when their session is operated (x). Origins that can produce no walk-ins under
    ``walkin_mode`` are not forced onto a facility, so their routing may be empty.

    Args:
        backend: Backend recording the model
        handle: Model to extend
        inst: Instance or session-expanded instance
        walkin_mode: Demand mode deciding which origins must route their walk-ins

    Returns:
        PlanVariables with the declared variable names
    """
    pv = PlanVariables()
    sites = inst.site_by_id()
    practice_ids = {p.id for p in inst.practices}
    groups = inst.groups()
    group_of = inst.group_of_site()

    for group, members in groups.items():
        pv.y[group] = backend.add_var(handle, f"y[{group}]", 0, 1, integer=True)
    for site in inst.sites:
        pv.x[site.id] = backend.add_var(handle, f"x[{site.id}]", 0, site.session_cap, integer=True)
        backend.add_linear_constraint(
            handle, {pv.x[site.id]: 1, pv.y[group_of[site.id]]: -site.session_cap}, "<=", 0, f"setup[{site.id}]"
        )
        pv.operating[site.id] = pv.x[site.id] if inst.is_session_expanded else pv.y[group_of[site.id]]

    for origin in inst.origins:
        entries = origin.walkin_facility_ids
        for fid in entries:
            pv.w[(origin.id, fid)] = backend.add_var(handle, f"w[{origin.id},{fid}]", 0, 1, integer=True)
        if entries and walkin_bound(origin, walkin_mode) > 0:
            backend.add_linear_constraint(
                handle, {pv.w[(origin.id, fid)]: 1 for fid in entries}, ">=", 1, f"route[{origin.id}]"
            )

        earlier: Dict[str, float] = {}
        for fid in entries:
            w = pv.w[(origin.id, fid)]
            if fid in practice_ids:
                backend.add_linear_constraint(handle, {w: 1, **earlier}, ">=", 1, f"closest[{origin.id},{fid}]")
            elif fid in sites:
                op = pv.operating[fid]
                backend.add_linear_constraint(handle, {w: 1, op: -1}, "<=", 0, f"open[{origin.id},{fid}]")
                backend.add_linear_constraint(handle, {w: 1, op: -1, **earlier}, ">=", 0, f"closest[{origin.id},{fid}]")
            earlier[w] = 1

    objective: Dict[str, float] = {}
    for group, members in groups.items():
        objective[pv.y[group]] = float(max(sites[m].setup_cost for m in members))
    for site in inst.sites:
        objective[pv.x[site.id]] = float(inst.session_cost)
    backend.set_objective(handle, objective)
    return pv


def extract_plan(inst: Instance, pv: PlanVariables, outcome: SolveOutcome) -> Plan:
    """Plan from solver values, with walk-in routing normalized to the first operating facility."""
    group_of = inst.group_of_site()
    setup = {site.id: outcome.rounded(pv.y[group_of[site.id]]) for site in inst.sites}
    sessions = {site.id: outcome.rounded(pv.x[site.id]) for site in inst.sites}
    matrix: Dict[str, Dict[str, int]] = {}
    for (vid, fid), var in pv.w.items():
        matrix.setdefault(vid, {})[fid] = outcome.rounded(var)
    plan = Plan(setup=setup, sessions=sessions, walkin_matrix=matrix)
    plan = normalize_walkin_assignment(inst, plan)
    return plan.model_copy(update={"cost": plan_cost(inst, plan)})
