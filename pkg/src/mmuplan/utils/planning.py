"""
Instance validation and plan procedures shared by every solver.

The normalization helpers canonicalize solver output: walk-in indicators keep only the
first operating facility in consideration order, and steerable assignments are trimmed
back to the exact demand by scanning facilities in that same order.
"""

import logging
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ..models import (
    ConsiderationEntry,
    DemandOrigin,
    ExpandedInstance,
    Instance,
    Plan,
    Practice,
    Site,
)

logger = logging.getLogger(__name__)

SteerableScope = Union[str, Callable[[str, str], Sequence[str]]]


def expanded_id(base_id: str, session: str) -> str:
    return f"{base_id}@{session}"


def split_evenly(value: int, parts: int) -> List[int]:
    """Split an integer into ``parts`` integers, remainders going to the first parts."""
    quotient, remainder = divmod(value, parts)
    return [quotient + 1 if i < remainder else quotient for i in range(parts)]


def validate_instance(inst: Instance) -> List[str]:
    """
    Check the cross-field invariants of an instance.

    Args:
        inst: Instance to check

    Returns:
        List of human-readable violations, empty when the instance is well formed
    """
    violations: List[str] = []

    facility_ids = [f.id for f in [*inst.sites, *inst.practices]]
    seen = set()
    for fid in facility_ids:
        if fid in seen:
            violations.append(f"duplicate facility id '{fid}'")
        seen.add(fid)
    origin_ids = [o.id for o in inst.origins]
    if len(set(origin_ids)) != len(origin_ids):
        violations.append("duplicate origin ids")

    for site in inst.sites:
        if site.setup_cost < 0 or site.session_cap < 0:
            violations.append(f"site '{site.id}' has negative cost or capacity")
    for practice in inst.practices:
        if practice.capacity < 0:
            violations.append(f"practice '{practice.id}' has negative capacity")

    known = set(facility_ids)
    for origin in inst.origins:
        if not 0 <= origin.steerable_lo <= origin.steerable_hi:
            violations.append(
                f"origin '{origin.id}': steerable bounds {origin.steerable_lo}..{origin.steerable_hi} invalid"
            )
        if not 0 <= origin.walkin_lo <= origin.walkin_hi:
            violations.append(
                f"origin '{origin.id}': walk-in bounds {origin.walkin_lo}..{origin.walkin_hi} invalid"
            )

        total = max(origin.steerable_nominal, origin.steerable_hi) + max(origin.walkin_nominal, origin.walkin_hi)
        if total > 0 and not origin.consideration:
            violations.append(f"origin '{origin.id}' has demand but an empty consideration set")
        walkin_total = max(origin.walkin_nominal, origin.walkin_hi)
        if walkin_total > 0 and not origin.walkin_entries:
            violations.append(f"origin '{origin.id}' has walk-in demand but no walk-in consideration")

        for label, entries in (("consideration", origin.consideration), ("walk-in consideration", origin.walkin_entries)):
            for entry in entries:
                if entry.facility_id not in known:
                    violations.append(
                        f"origin '{origin.id}' references unknown facility '{entry.facility_id}' in its {label}"
                    )
            ids = [entry.facility_id for entry in entries]
            if len(set(ids)) != len(ids):
                violations.append(f"origin '{origin.id}' lists a facility twice in its {label}")
            keys = [(entry.distance_m, entry.facility_id) for entry in entries]
            if keys != sorted(keys):
                violations.append(f"origin '{origin.id}': {label} is not ordered by (distance, facility id)")

    if isinstance(inst, ExpandedInstance) and inst.base_facility:
        for origin in inst.origins:
            _, session = inst.base_origin.get(origin.id, (None, None))
            for fid in origin.walkin_facility_ids:
                if fid in inst.base_facility and inst.base_facility[fid][1] != session:
                    violations.append(f"origin '{origin.id}' walk-ins reach '{fid}' in another session")

    if inst.setup_groups:
        site_ids = {site.id for site in inst.sites}
        grouped = [member for members in inst.setup_groups.values() for member in members]
        if sorted(grouped) != sorted(site_ids):
            violations.append("setup groups must partition the sites")

    unc = inst.uncertainty
    if unc.kind == "budgeted":
        if unc.gamma_steerable is None or unc.gamma_walkin is None:
            violations.append("budgeted uncertainty needs gamma_steerable and gamma_walkin")
        else:
            sum_alpha = sum(o.steerable_lo for o in inst.origins)
            sum_beta = sum(o.steerable_hi for o in inst.origins)
            sum_sigma = sum(o.walkin_lo for o in inst.origins)
            sum_tau = sum(o.walkin_hi for o in inst.origins)
            if unc.gamma_steerable < sum_alpha:
                violations.append(
                    f"empty uncertainty set: gamma_steerable={unc.gamma_steerable} < sum of lower bounds {sum_alpha}"
                )
            elif unc.gamma_steerable > sum_beta:
                violations.append(f"gamma_steerable={unc.gamma_steerable} exceeds sum of upper bounds {sum_beta}")
            if unc.gamma_walkin < sum_sigma:
                violations.append(
                    f"empty uncertainty set: gamma_walkin={unc.gamma_walkin} < sum of lower bounds {sum_sigma}"
                )
            elif unc.gamma_walkin > sum_tau:
                violations.append(f"gamma_walkin={unc.gamma_walkin} exceeds sum of upper bounds {sum_tau}")

    return violations


def _first_operating(
    entries: Sequence[ConsiderationEntry],
    practice_ids: set,
    operating: Mapping[str, int],
) -> Optional[str]:
    for entry in entries:
        if entry.facility_id in practice_ids or operating.get(entry.facility_id, 0) >= 1:
            return entry.facility_id
    return None


def closest_operating_facility(
    inst: Instance, origin: DemandOrigin, setup: Mapping[str, int]
) -> Optional[str]:
    """First walk-in consideration entry that is a practice or an operating site, else None."""
    practice_ids = {p.id for p in inst.practices}
    return _first_operating(origin.walkin_entries, practice_ids, setup)


def operating_sites(inst: Instance, plan: Plan) -> Dict[str, int]:
    """Which sites walk-ins can reach: setup flags, or operated sessions on expanded instances."""
    if inst.is_session_expanded:
        return {site.id: int(plan.sessions.get(site.id, 0) > 0) for site in inst.sites}
    return {site.id: int(plan.setup.get(site.id, 0)) for site in inst.sites}


def closest_routes(inst: Instance, operating: Mapping[str, int]) -> Dict[str, Optional[str]]:
    practice_ids = {p.id for p in inst.practices}
    return {o.id: _first_operating(o.walkin_entries, practice_ids, operating) for o in inst.origins}


def plan_cost(inst: Instance, plan: Plan) -> int:
    sites = inst.site_by_id()
    cost = 0
    for members in inst.groups().values():
        if any(plan.sessions.get(member, 0) > 0 for member in members):
            cost += max(sites[member].setup_cost for member in members)
    return cost + inst.session_cost * sum(plan.sessions.get(site.id, 0) for site in inst.sites)


def normalize_walkin_assignment(inst: Instance, plan: Plan) -> Plan:
    """Keep, per origin, only the walk-in indicator at the smallest consideration index."""
    matrix = plan.walkin_matrix
    if matrix is None:
        matrix = {
            vid: {fid: 1} for vid, fid in plan.walkin_route.items() if fid is not None
        }

    normalized: Dict[str, Dict[str, int]] = {}
    route: Dict[str, Optional[str]] = {}
    for origin in inst.origins:
        row = matrix.get(origin.id, {})
        kept = next((fid for fid in origin.walkin_facility_ids if row.get(fid, 0) >= 0.5), None)
        normalized[origin.id] = {fid: int(fid == kept) for fid in origin.walkin_facility_ids}
        route[origin.id] = kept
    return plan.model_copy(update={"walkin_matrix": normalized, "walkin_route": route})


def trim_steerable_assignment(inst: Instance, plan: Plan) -> Plan:
    """Reduce an over-assignment to exactly d_v, removing surplus in consideration order."""
    if plan.steerable_assign is None:
        return plan

    trimmed: Dict[str, Dict[str, int]] = {}
    for origin in inst.origins:
        row = dict(plan.steerable_assign.get(origin.id, {}))
        surplus = sum(row.values()) - origin.steerable_nominal
        if surplus < 0:
            logger.warning(f"origin '{origin.id}' is under-assigned by {-surplus}; left untouched")
            trimmed[origin.id] = row
            continue

        order = origin.facility_ids + sorted(fid for fid in row if fid not in origin.facility_ids)
        new_row: Dict[str, int] = {}
        assigned_before = 0
        for fid in order:
            if fid not in row:
                continue
            amount = row[fid]
            new_row[fid] = amount - min(amount, max(0, surplus - assigned_before))
            assigned_before += amount
        trimmed[origin.id] = new_row
    return plan.model_copy(update={"steerable_assign": trimmed})


def expand_sessions(
    inst: Instance,
    session_labels: Sequence[str],
    practice_caps: Optional[Mapping[Tuple[str, str], int]] = None,
    steerable_scope: SteerableScope = "all_sessions",
    session_demands: Optional[Mapping[Tuple[str, str], Tuple[int, int]]] = None,
) -> ExpandedInstance:
    """
    Build the session-expanded instance.

    Args:
        inst: Base instance
        session_labels: Ordered session labels, e.g. ["MO_AM", "MO_PM"]
        practice_caps: Capacity per (practice, session); missing entries split the weekly capacity evenly
        steerable_scope: "all_sessions", "same_session", or a callable (origin id, session) -> sessions
        session_demands: Optional explicit (steerable, walk-in) nominal demand per (origin, session)

    Returns:
        ExpandedInstance whose sites operate at most once per session
    """
    labels = list(session_labels)
    if not labels:
        raise ValueError("session_labels must not be empty")
    if len(set(labels)) != len(labels):
        raise ValueError(f"session labels must be unique, got {labels}")
    if inst.is_session_expanded:
        raise ValueError("instance is already session-expanded")

    practice_caps = practice_caps or {}
    session_demands = session_demands or {}
    n = len(labels)

    if callable(steerable_scope):
        scope_of = steerable_scope
        scope_name = getattr(steerable_scope, "__name__", "custom")
    elif steerable_scope == "all_sessions":
        scope_of = lambda origin_id, session: labels
        scope_name = steerable_scope
    elif steerable_scope == "same_session":
        scope_of = lambda origin_id, session: [session]
        scope_name = steerable_scope
    else:
        raise ValueError(f"Unknown steerable scope: {steerable_scope}")

    sites: List[Site] = []
    groups: Dict[str, List[str]] = {}
    base_facility: Dict[str, Tuple[str, str]] = {}
    for site in inst.sites:
        groups[site.id] = []
        for t in labels:
            fid = expanded_id(site.id, t)
            sites.append(Site(id=fid, setup_cost=site.setup_cost, session_cap=min(1, site.session_cap), coord=site.coord))
            groups[site.id].append(fid)
            base_facility[fid] = (site.id, t)

    practices: List[Practice] = []
    for practice in inst.practices:
        even = split_evenly(practice.capacity, n)
        for i, t in enumerate(labels):
            fid = expanded_id(practice.id, t)
            cap = practice_caps.get((practice.id, t), even[i])
            practices.append(Practice(id=fid, capacity=cap, coord=practice.coord))
            base_facility[fid] = (practice.id, t)

    origins: List[DemandOrigin] = []
    base_origin: Dict[str, Tuple[str, str]] = {}
    for origin in inst.origins:
        parts = {
            name: split_evenly(getattr(origin, name), n)
            for name in ("steerable_nominal", "walkin_nominal", "steerable_lo", "steerable_hi", "walkin_lo", "walkin_hi")
        }
        for i, t in enumerate(labels):
            vid = expanded_id(origin.id, t)
            d, u = session_demands.get((origin.id, t), (parts["steerable_nominal"][i], parts["walkin_nominal"][i]))
            if not (
                parts["steerable_lo"][i] <= d <= parts["steerable_hi"][i] and parts["walkin_lo"][i] <= u <= parts["walkin_hi"][i]
            ):
                logger.warning(
                    f"origin '{origin.id}' session '{t}': explicit demands ({d}, {u}) lie outside the split bounds, widening them"
                )
            walkin = sorted(
                (ConsiderationEntry(facility_id=expanded_id(e.facility_id, t), distance_m=e.distance_m) for e in origin.consideration),
                key=lambda e: (e.distance_m, e.facility_id),
            )
            steerable = sorted(
                (
                    ConsiderationEntry(facility_id=expanded_id(e.facility_id, s), distance_m=e.distance_m)
                    for e in origin.consideration
                    for s in scope_of(origin.id, t)
                ),
                key=lambda e: (e.distance_m, e.facility_id),
            )
            origins.append(
                DemandOrigin(
                    id=vid,
                    steerable_nominal=d,
                    walkin_nominal=u,
                    steerable_lo=min(parts["steerable_lo"][i], d),
                    steerable_hi=max(parts["steerable_hi"][i], d),
                    walkin_lo=min(parts["walkin_lo"][i], u),
                    walkin_hi=max(parts["walkin_hi"][i], u),
                    consideration=steerable,
                    walkin_consideration=walkin,
                    coord=origin.coord,
                )
            )
            base_origin[vid] = (origin.id, t)

    metadata = {**inst.metadata, "sessions": labels, "steerable_scope": scope_name}
    return ExpandedInstance(
        name=f"{inst.name}-sessions",
        sites=sites,
        practices=practices,
        origins=origins,
        session_cost=inst.session_cost,
        session_capacity=inst.session_capacity,
        uncertainty=inst.uncertainty,
        setup_groups=groups,
        metadata=metadata,
        sessions=labels,
        base_facility=base_facility,
        base_origin=base_origin,
    )


def flatten_plan(inst: ExpandedInstance, plan: Plan) -> Dict[str, List[str]]:
    """Base site id -> sessions in which it operates."""
    schedule: Dict[str, List[str]] = {site_id: [] for site_id in inst.setup_groups}
    for fid, count in plan.sessions.items():
        if count > 0 and fid in inst.base_facility:
            site_id, session = inst.base_facility[fid]
            schedule[site_id].append(session)
    for sessions in schedule.values():
        sessions.sort(key=inst.sessions.index)
    return schedule
