import logging

import numpy as np
import pytest

from mmuplan.models import ConsiderationEntry, DemandOrigin, Plan, Practice, Site, UncertaintyModel
from mmuplan.utils.planning import (
    closest_operating_facility,
    expand_sessions,
    flatten_plan,
    normalize_walkin_assignment,
    plan_cost,
    split_evenly,
    trim_steerable_assignment,
    validate_instance,
)

from .conftest import tiny_instance


def test_validate_well_formed(tiny):
    """Test that a well-formed instance has no violations"""
    assert validate_instance(tiny) == []


def test_validate_unknown_facility():
    """Test that an unknown facility reference is reported with the origin and facility"""
    inst = tiny_instance(
        consideration=[
            ConsiderationEntry(facility_id="p1", distance_m=800),
            ConsiderationEntry(facility_id="p9", distance_m=900),
        ]
    )
    violations = validate_instance(inst)
    assert len(violations) == 1
    assert "v1" in violations[0] and "p9" in violations[0]


def test_validate_empty_budgeted_set(tiny):
    """Test that a steerable budget below the lower bounds is an empty uncertainty set"""
    inst = tiny.model_copy(
        update={
            "origins": [tiny.origins[0].model_copy(update={"steerable_lo": 25, "steerable_hi": 35})],
            "uncertainty": UncertaintyModel(kind="budgeted", gamma_steerable=20, gamma_walkin=3),
        }
    )
    violations = validate_instance(inst)
    assert len(violations) == 1
    assert "empty uncertainty set" in violations[0]


def test_validate_unordered_consideration():
    """Test that consideration sets must be ordered by distance"""
    inst = tiny_instance(
        consideration=[
            ConsiderationEntry(facility_id="l1", distance_m=1500),
            ConsiderationEntry(facility_id="p1", distance_m=800),
        ]
    )
    assert any("not ordered" in v for v in validate_instance(inst))


def test_closest_operating_facility(tiny):
    """Test that the practice ahead of the site is closest whether or not the site is set up"""
    origin = tiny.origins[0]
    assert closest_operating_facility(tiny, origin, {"l1": 0}) == "p1"
    assert closest_operating_facility(tiny, origin, {"l1": 1}) == "p1"


def test_closest_operating_facility_site_first():
    """Test that a closer site is used only when it operates"""
    inst = tiny_instance(
        consideration=[
            ConsiderationEntry(facility_id="l1", distance_m=100),
            ConsiderationEntry(facility_id="p1", distance_m=800),
        ]
    )
    origin = inst.origins[0]
    assert closest_operating_facility(inst, origin, {"l1": 1}) == "l1"
    assert closest_operating_facility(inst, origin, {"l1": 0}) == "p1"


def test_closest_operating_facility_none():
    """Test that an origin seeing only closed sites has no closest facility"""
    inst = tiny_instance(consideration=[ConsiderationEntry(facility_id="l1", distance_m=100)])
    assert closest_operating_facility(inst, inst.origins[0], {"l1": 0}) is None


def test_plan_cost(tiny):
    """Test the setup plus per-session cost"""
    plan = Plan(setup={"l1": 1}, sessions={"l1": 2})
    assert plan_cost(tiny, plan) == 4
    assert plan_cost(tiny, Plan(setup={"l1": 0}, sessions={"l1": 0})) == 0


def test_normalize_keeps_first_indicator():
    """Test that normalization keeps a single walk-in indicator at the smallest index"""
    rng = np.random.default_rng(3)
    ids = [f"p{i}" for i in range(1, 6)]
    inst = tiny_instance(
        consideration=[ConsiderationEntry(facility_id=fid, distance_m=100 * i) for i, fid in enumerate(ids, start=1)]
    ).model_copy(update={"practices": [Practice(id=fid, capacity=10) for fid in ids]})
    for _ in range(20):
        ones = set(rng.choice(5, size=3, replace=False).tolist())
        matrix = {"v1": {fid: int(i in ones) for i, fid in enumerate(ids)}}
        plan = normalize_walkin_assignment(inst, Plan(walkin_matrix=matrix))
        expected = ids[min(ones)]
        assert plan.walkin_route == {"v1": expected}
        assert sum(plan.walkin_matrix["v1"].values()) == 1
        assert plan.walkin_matrix["v1"][expected] == 1


def test_trim_removes_surplus_in_order(tiny):
    """Test that surplus steerable assignment is removed starting at the first facility"""
    plan = Plan(steerable_assign={"v1": {"p1": 4, "l1": 30}})
    trimmed = trim_steerable_assignment(tiny, plan)
    assert trimmed.steerable_assign == {"v1": {"p1": 0, "l1": 30}}

    plan = Plan(steerable_assign={"v1": {"p1": 3, "l1": 28}})
    trimmed = trim_steerable_assignment(tiny, plan)
    assert trimmed.steerable_assign == {"v1": {"p1": 2, "l1": 28}}
    assert sum(trimmed.steerable_assign["v1"].values()) == 30


def test_split_evenly():
    """Test that remainders go to the first parts"""
    assert split_evenly(7, 3) == [3, 2, 2]
    assert split_evenly(0, 2) == [0, 0]


def test_expand_sessions(tiny):
    """Test the shape of a two-session expansion"""
    expanded = expand_sessions(tiny, ["AM", "PM"])
    assert [s.id for s in expanded.sites] == ["l1@AM", "l1@PM"]
    assert all(s.session_cap == 1 for s in expanded.sites)
    assert expanded.setup_groups == {"l1": ["l1@AM", "l1@PM"]}
    assert {p.id: p.capacity for p in expanded.practices} == {"p1@AM": 2, "p1@PM": 2}

    origins = expanded.origin_by_id()
    assert origins["v1@AM"].steerable_nominal == 15
    assert origins["v1@AM"].walkin_nominal == 2
    assert origins["v1@PM"].walkin_nominal == 1
    # steerable demand may move across sessions, walk-ins stay in theirs
    assert set(origins["v1@AM"].facility_ids) == {"p1@AM", "p1@PM", "l1@AM", "l1@PM"}
    assert origins["v1@AM"].walkin_facility_ids == ["p1@AM", "l1@AM"]
    assert validate_instance(expanded) == []


def test_expand_sessions_same_session(tiny):
    """Test that the same-session scope keeps steerable demand in its session"""
    expanded = expand_sessions(tiny, ["AM", "PM"], steerable_scope="same_session")
    assert expanded.origin_by_id()["v1@PM"].facility_ids == ["p1@PM", "l1@PM"]


def test_expand_sessions_warns_on_widened_bounds(tiny, caplog):
    """Test that explicit session demands outside the split bounds widen them with a warning"""
    with caplog.at_level(logging.WARNING, logger="mmuplan.utils.planning"):
        expanded = expand_sessions(tiny, ["AM", "PM"], session_demands={("v1", "AM"): (20, 2)})
    origin = expanded.origin_by_id()["v1@AM"]
    assert (origin.steerable_lo, origin.steerable_nominal, origin.steerable_hi) == (15, 20, 20)
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1
    assert "v1" in warnings[0].getMessage() and "AM" in warnings[0].getMessage()

    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="mmuplan.utils.planning"):
        expand_sessions(tiny, ["AM", "PM"], session_demands={("v1", "PM"): (15, 1)})
    assert not [r for r in caplog.records if r.levelno == logging.WARNING]


def test_expand_sessions_rejects_duplicates(tiny):
    """Test that duplicate session labels are rejected"""
    with pytest.raises(ValueError):
        expand_sessions(tiny, ["AM", "AM"])


def test_flatten_plan(tiny):
    """Test mapping expanded sessions back onto base sites"""
    expanded = expand_sessions(tiny, ["MO", "TU", "WE"])
    plan = Plan(sessions={"l1@WE": 1, "l1@MO": 1, "l1@TU": 0})
    assert flatten_plan(expanded, plan) == {"l1": ["MO", "WE"]}


def test_setup_groups_share_cost(tiny):
    """Test that expanded sessions of one site pay its setup cost once"""
    expanded = expand_sessions(tiny, ["AM", "PM"])
    plan = Plan(sessions={"l1@AM": 1, "l1@PM": 1})
    assert plan_cost(expanded, plan) == 4


def test_validate_partition_of_groups(tiny):
    """Test that setup groups must cover every site"""
    expanded = expand_sessions(tiny, ["AM", "PM"])
    broken = expanded.model_copy(update={"sites": [*expanded.sites, Site(id="l9", setup_cost=1, session_cap=1)]})
    assert any("partition" in v for v in validate_instance(broken))
