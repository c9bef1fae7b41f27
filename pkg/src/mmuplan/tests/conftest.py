import itertools
from typing import Optional

import numpy as np
import pytest

from mmuplan.backends import get_backend
from mmuplan.models import (
    ConsiderationEntry,
    DemandOrigin,
    Instance,
    Plan,
    Practice,
    Site,
    UncertaintyModel,
)
from mmuplan.utils.maxflow import build_benders_network, max_flow, residual_capacities
from mmuplan.utils.planning import closest_routes, plan_cost


def tiny_instance(**origin_fields) -> Instance:
    """One site l1, one practice p1 (capacity 4) and one origin v1 that considers p1 before l1."""
    origin = {
        "id": "v1",
        "steerable_nominal": 30,
        "walkin_nominal": 3,
        "consideration": [
            ConsiderationEntry(facility_id="p1", distance_m=800),
            ConsiderationEntry(facility_id="l1", distance_m=1500),
        ],
    }
    origin.update(origin_fields)
    return Instance(
        name="tiny-1",
        sites=[Site(id="l1", setup_cost=2, session_cap=10)],
        practices=[Practice(id="p1", capacity=4)],
        origins=[DemandOrigin(**origin)],
        session_cost=1,
        session_capacity=28,
    )


@pytest.fixture
def tiny():
    return tiny_instance()


@pytest.fixture
def tiny_unc():
    """Tiny instance with walk-ins in [2, 5] and walk-in budget 5; robust masters are infeasible on it."""
    inst = tiny_instance(walkin_lo=2, walkin_hi=5)
    return inst.model_copy(
        update={
            "name": "tiny-1-unc",
            "uncertainty": UncertaintyModel(kind="budgeted", gamma_steerable=30, gamma_walkin=5),
        }
    )


@pytest.fixture
def robust_instance():
    """Two origins, two sites and a practice; deterministic, budgeted and interval models are all feasible."""
    return Instance(
        name="robust-small",
        sites=[Site(id="l1", setup_cost=2, session_cap=10), Site(id="l2", setup_cost=3, session_cap=10)],
        practices=[Practice(id="p1", capacity=10)],
        origins=[
            DemandOrigin(
                id="v1",
                steerable_nominal=20,
                steerable_lo=10,
                steerable_hi=30,
                walkin_nominal=2,
                walkin_lo=1,
                walkin_hi=4,
                consideration=[
                    ConsiderationEntry(facility_id="p1", distance_m=500),
                    ConsiderationEntry(facility_id="l1", distance_m=800),
                ],
            ),
            DemandOrigin(
                id="v2",
                steerable_nominal=15,
                steerable_lo=5,
                steerable_hi=25,
                walkin_nominal=1,
                walkin_lo=0,
                walkin_hi=3,
                consideration=[
                    ConsiderationEntry(facility_id="l2", distance_m=300),
                    ConsiderationEntry(facility_id="p1", distance_m=900),
                ],
            ),
        ],
        session_cost=1,
        session_capacity=28,
        uncertainty=UncertaintyModel(kind="budgeted", gamma_steerable=40, gamma_walkin=4),
    )


def random_instance(
    seed: int,
    n_origins: int = 6,
    n_sites: int = 3,
    n_practices: int = 2,
    max_sessions: int = 2,
    session_capacity: int = 10,
) -> Instance:
    """Small well-formed instance with budgeted uncertainty that contains the nominal demands."""
    rng = np.random.default_rng(seed)
    sites = [
        Site(id=f"l{i + 1}", setup_cost=int(rng.integers(1, 4)), session_cap=int(rng.integers(1, max_sessions + 1)))
        for i in range(n_sites)
    ]
    practices = [Practice(id=f"p{i + 1}", capacity=int(rng.integers(0, 30))) for i in range(n_practices)]
    facility_ids = [f.id for f in [*sites, *practices]]

    origins = []
    for i in range(n_origins):
        k = int(rng.integers(1, min(3, len(facility_ids)) + 1))
        chosen = rng.choice(len(facility_ids), size=k, replace=False)
        entries = sorted((int(rng.integers(100, 5000)), facility_ids[c]) for c in chosen)
        d = int(rng.integers(0, 25))
        u = int(rng.integers(0, 6))
        origins.append(
            DemandOrigin(
                id=f"v{i + 1}",
                steerable_nominal=d,
                steerable_lo=max(0, d - int(rng.integers(0, 5))),
                steerable_hi=d + int(rng.integers(0, 6)),
                walkin_nominal=u,
                walkin_lo=max(0, u - int(rng.integers(0, 3))),
                walkin_hi=u + int(rng.integers(0, 3)),
                consideration=[ConsiderationEntry(facility_id=fid, distance_m=dist) for dist, fid in entries],
            )
        )

    sum_d = sum(o.steerable_nominal for o in origins)
    sum_beta = sum(o.steerable_hi for o in origins)
    sum_u = sum(o.walkin_nominal for o in origins)
    sum_tau = sum(o.walkin_hi for o in origins)
    uncertainty = UncertaintyModel(
        kind="budgeted",
        gamma_steerable=int(rng.integers(sum_d, sum_beta + 1)),
        gamma_walkin=int(rng.integers(sum_u, sum_tau + 1)),
    )
    return Instance(
        name=f"random-{seed}",
        sites=sites,
        practices=practices,
        origins=origins,
        session_cost=1,
        session_capacity=session_capacity,
        uncertainty=uncertainty,
    )


def brute_force_optimum(inst: Instance) -> Optional[int]:
    """Cheapest session vector whose closest-facility walk-ins and steerable demand fit, by enumeration."""
    site_ids = [site.id for site in inst.sites]
    best = None
    for combo in itertools.product(*(range(site.session_cap + 1) for site in inst.sites)):
        sessions = dict(zip(site_ids, combo))
        operating = {sid: int(n > 0) for sid, n in sessions.items()}
        routes = closest_routes(inst, operating)
        if any(o.walkin_nominal > 0 and routes[o.id] is None for o in inst.origins):
            continue
        residuals = residual_capacities(inst, sessions, routes, "nominal")
        if residuals.breaches:
            continue
        net = build_benders_network(inst, residuals, "nominal")
        if max_flow(net).value < net.total_demand:
            continue
        cost = plan_cost(inst, Plan(setup=operating, sessions=sessions))
        if best is None or cost < best:
            best = cost
    return best


@pytest.fixture
def backend():
    return get_backend("cbc")
