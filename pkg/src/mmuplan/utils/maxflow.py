"""
Flow network for steerable-demand feasibility.

Source arcs carry the steerable demand of every origin, facility arcs into the sink
carry residual capacities, and origin-facility arcs mirror the consideration sets with
capacity D (the total demand) in place of infinity.
"""

import logging
from typing import Any, Dict, Hashable, Mapping, Optional, Set, Tuple

import networkx as nx
from networkx.algorithms.flow import edmonds_karp
from pydantic import BaseModel, ConfigDict

from ..exceptions import AssumptionViolationError, InfeasiblePlanError
from ..models import Instance

logger = logging.getLogger(__name__)

SOURCE = ("source",)
SINK = ("sink",)


def origin_node(origin_id: str) -> Tuple[str, str]:
    return ("origin", origin_id)


def facility_node(facility_id: str) -> Tuple[str, str]:
    return ("facility", facility_id)


class ResidualCapacities(BaseModel):
    gamma: Dict[str, int]

    @property
    def breaches(self) -> Dict[str, int]:
        return {fid: value for fid, value in self.gamma.items() if value < 0}

    def clamped(self) -> "ResidualCapacities":
        return ResidualCapacities(gamma={fid: max(0, value) for fid, value in self.gamma.items()})


class FlowNetwork(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    graph: nx.DiGraph
    total_demand: int


class FlowResult(BaseModel):
    value: int
    flow: Dict[Hashable, Dict[Hashable, int]]
    source_side: Set[Hashable]


def steerable_demands(inst: Instance, mode: str = "nominal", realized: Optional[Mapping[str, int]] = None) -> Dict[str, int]:
    if mode == "nominal":
        return {o.id: o.steerable_nominal for o in inst.origins}
    if mode == "interval":
        return {o.id: o.steerable_hi for o in inst.origins}
    if mode == "realized":
        if realized is None:
            raise ValueError("realized mode needs realized steerable demands")
        return {o.id: int(realized.get(o.id, 0)) for o in inst.origins}
    raise ValueError(f"Unknown steerable demand mode: {mode}")


def walkin_loads(
    inst: Instance,
    walkin_route: Mapping[str, Optional[str]],
    demand_mode: str = "nominal",
    realized: Optional[Mapping[str, int]] = None,
) -> Dict[str, int]:
    """Walk-in load per facility under a fixed routing."""
    facilities = [f.id for f in [*inst.sites, *inst.practices]]
    loads = {fid: 0 for fid in facilities}

    if demand_mode == "budgeted":
        gamma = inst.uncertainty.gamma_walkin
        if gamma is None:
            raise ValueError("budgeted mode needs gamma_walkin")
        sum_sigma = sum(o.walkin_lo for o in inst.origins)
        for fid in facilities:
            routed = [o for o in inst.origins if walkin_route.get(o.id) == fid]
            loads[fid] = min(
                sum(o.walkin_hi for o in routed),
                gamma - (sum_sigma - sum(o.walkin_lo for o in routed)),
            )
        return loads

    for origin in inst.origins:
        fid = walkin_route.get(origin.id)
        if fid is None:
            continue
        if demand_mode == "nominal":
            amount = origin.walkin_nominal
        elif demand_mode == "interval":
            amount = origin.walkin_hi
        elif demand_mode == "realized":
            if realized is None:
                raise ValueError("realized mode needs realized walk-in demands")
            amount = int(realized.get(origin.id, 0))
        else:
            raise ValueError(f"Unknown walk-in demand mode: {demand_mode}")
        loads[fid] += amount
    return loads


def facility_capacities(inst: Instance, sessions: Mapping[str, int]) -> Dict[str, int]:
    caps = {site.id: inst.session_capacity * int(sessions.get(site.id, 0)) for site in inst.sites}
    caps.update({practice.id: practice.capacity for practice in inst.practices})
    return caps


def residual_capacities(
    inst: Instance,
    sessions: Mapping[str, int],
    walkin_route: Mapping[str, Optional[str]],
    demand_mode: str = "nominal",
    realized_walkin: Optional[Mapping[str, int]] = None,
) -> ResidualCapacities:
    """
    Capacity left at every facility after the routed walk-ins.

    Args:
        inst: Instance
        sessions: Sessions per site (x)
        walkin_route: Normalized walk-in routing, origin -> facility or None
        demand_mode: "nominal", "interval", "budgeted" (worst case per facility) or "realized"
        realized_walkin: Walk-in demand per origin for "realized"

    Returns:
        ResidualCapacities, possibly with negative entries (walk-in capacity breaches)
    """
    caps = facility_capacities(inst, sessions)
    loads = walkin_loads(inst, walkin_route, demand_mode, realized_walkin)
    residuals = ResidualCapacities(gamma={fid: caps[fid] - loads[fid] for fid in caps})
    if residuals.breaches:
        logger.debug(f"walk-in capacity breaches under {demand_mode} walk-ins: {residuals.breaches}")
    return residuals


def build_benders_network(
    inst: Instance,
    residuals: ResidualCapacities,
    steerable_mode: str = "nominal",
    realized_steerable: Optional[Mapping[str, int]] = None,
) -> FlowNetwork:
    if residuals.breaches:
        raise AssumptionViolationError(f"negative residual capacities: {residuals.breaches}")

    demands = steerable_demands(inst, steerable_mode, realized_steerable)
    total = sum(demands.values())

    graph = nx.DiGraph()
    graph.add_node(SOURCE)
    for origin in inst.origins:
        graph.add_edge(SOURCE, origin_node(origin.id), capacity=demands[origin.id])
    for facility in [*inst.sites, *inst.practices]:
        graph.add_edge(facility_node(facility.id), SINK, capacity=residuals.gamma.get(facility.id, 0))
    for origin in inst.origins:
        for fid in origin.facility_ids:
            graph.add_edge(origin_node(origin.id), facility_node(fid), capacity=total)
    graph.add_node(SINK)
    return FlowNetwork(graph=graph, total_demand=total)


def max_flow(net: FlowNetwork) -> FlowResult:
    """Exact integral max flow plus the inclusion-minimal source side of a min cut."""
    graph = net.graph
    if graph.number_of_edges() == 0:
        return FlowResult(value=0, flow={}, source_side={SOURCE})

    residual = edmonds_karp(graph, SOURCE, SINK, capacity="capacity")
    value = int(residual.graph["flow_value"])

    flow: Dict[Any, Dict[Any, int]] = {u: {} for u in graph}
    for u, v in graph.edges():
        # zero-capacity arcs are left out of the residual network
        flow[u][v] = int(residual[u][v]["flow"]) if residual.has_edge(u, v) else 0

    open_arcs = nx.subgraph_view(
        residual,
        filter_edge=lambda u, v: residual[u][v]["capacity"] - residual[u][v]["flow"] > 0,
    )
    source_side = nx.descendants(open_arcs, SOURCE) | {SOURCE}
    return FlowResult(value=value, flow=flow, source_side=source_side)


def min_cut(net: FlowNetwork) -> Set[Hashable]:
    return max_flow(net).source_side


def cut_capacity(net: FlowNetwork, source_side: Set[Hashable]) -> int:
    return sum(
        data["capacity"]
        for u, v, data in net.graph.edges(data=True)
        if u in source_side and v not in source_side
    )


def recover_assignment(inst: Instance, net: FlowNetwork, result: FlowResult) -> Dict[str, Dict[str, int]]:
    """Read the steerable assignment z_vk off a saturating flow."""
    if result.value < net.total_demand:
        raise InfeasiblePlanError(
            f"infeasible plan: flow value {result.value} < total steerable demand {net.total_demand}"
        )
    assignment: Dict[str, Dict[str, int]] = {}
    for origin in inst.origins:
        out = result.flow.get(origin_node(origin.id), {})
        assignment[origin.id] = {fid: int(out.get(facility_node(fid), 0)) for fid in origin.facility_ids}
    return assignment
