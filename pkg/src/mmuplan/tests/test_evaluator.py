import numpy as np
import pandas as pd
import pytest

from mmuplan.exceptions import SamplingError
from mmuplan.models import Cell, ConsiderationEntry, DemandOrigin, Instance, Plan, Practice, Realization
from mmuplan.pipelines import BendersSolver, PlanEvaluator, aggregate_realization, nominal_realization
from mmuplan.pipelines.evaluator import sample_budgeted_box

from .conftest import random_instance


def single_practice(capacity):
    return Instance(
        name="single",
        practices=[Practice(id="p1", capacity=capacity)],
        origins=[DemandOrigin(id="v1", consideration=[ConsiderationEntry(facility_id="p1", distance_m=100)])],
        session_cost=1,
        session_capacity=28,
    )


def realization(steerable, walkin, rid=0):
    return Realization(id=rid, steerable=steerable, walkin=walkin, level="origin")


@pytest.fixture
def cells():
    return [
        Cell(id="c1", coord=(0.0, 0.0), mean=3.0, origin_id="v1"),
        Cell(id="c2", coord=(0.5, 0.0), mean=2.0, origin_id="v1"),
        Cell(id="c3", coord=(10.0, 0.0), mean=4.0, origin_id="v2"),
    ]


def test_overload_example():
    """Test that 220 treatments at a facility with capacity 200 are 20 violations"""
    inst = single_practice(200)
    evaluator = PlanEvaluator()
    assert evaluator.min_total_violations(inst, Plan(), realization({"v1": 220}, {"v1": 0})) == 20
    assert evaluator.min_total_violations(inst, Plan(), realization({"v1": 0}, {"v1": 220})) == 20
    assert evaluator.min_total_violations(inst, Plan(), realization({"v1": 120}, {"v1": 100})) == 20


def test_no_capacity():
    """Test that all demand counts when nothing can treat it"""
    inst = single_practice(0)
    assert PlanEvaluator().min_total_violations(inst, Plan(), realization({"v1": 5}, {"v1": 0})) == 5


def test_unrouted_walkins(tiny):
    """Test that walk-ins without an operating facility count in full"""
    inst = tiny.model_copy(
        update={"origins": [tiny.origins[0].model_copy(update={"consideration": [ConsiderationEntry(facility_id="l1", distance_m=10)]})]}
    )
    plan = Plan(setup={"l1": 0}, sessions={"l1": 0})
    assert PlanEvaluator().min_total_violations(inst, plan, realization({"v1": 0}, {"v1": 7})) == 7


def test_nominal_realization_has_no_violations(tiny, backend):
    """Test that the deterministic plan handles the nominal demands"""
    plan = BendersSolver(backend).solve_benders(tiny).plan
    evaluator = PlanEvaluator()
    assert evaluator.min_total_violations(tiny, plan, nominal_realization(tiny)) == 0
    assert evaluator.min_total_violations(tiny, plan, realization({"v1": 58}, {"v1": 3})) == 1


def random_plan(inst, rng):
    sessions = {site.id: int(rng.integers(0, site.session_cap + 1)) for site in inst.sites}
    return Plan(setup={sid: int(n > 0) for sid, n in sessions.items()}, sessions=sessions)


@pytest.mark.parametrize("seed", range(10))
def test_violations_match_milp(seed, backend):
    """Test the flow decomposition against the minimum-overage MILP"""
    inst = random_instance(500 + seed, n_origins=8)
    evaluator = PlanEvaluator(backend)
    rng = np.random.default_rng(seed)
    realizations = evaluator.sample_realizations(inst, "interval-set", 5, seed=seed)
    for r in realizations:
        plan = random_plan(inst, rng)
        assert evaluator.min_total_violations(inst, plan, r) == evaluator.min_total_violations_milp(inst, plan, r)


def test_violations_monotone(backend):
    """Test that one more steerable patient adds at most one violation"""
    inst = random_instance(77, n_origins=6)
    evaluator = PlanEvaluator()
    rng = np.random.default_rng(77)
    for r in evaluator.sample_realizations(inst, "interval-set", 10, seed=1):
        plan = random_plan(inst, rng)
        base = evaluator.min_total_violations(inst, plan, r)
        for origin in inst.origins:
            bumped = r.model_copy(update={"steerable": {**r.steerable, origin.id: r.steerable[origin.id] + 1}})
            assert base <= evaluator.min_total_violations(inst, plan, bumped) <= base + 1


def test_history_walkin_fraction(tiny, cells):
    """Test the walk-in split at fractions zero and one"""
    evaluator = PlanEvaluator()
    none = evaluator.sample_realizations(tiny, "history", 5, seed=1, cells=cells, walkin_fraction=0.0)
    assert all(r.level == "cell" and sum(r.walkin.values()) == 0 for r in none)
    assert sum(sum(r.steerable.values()) for r in none) > 0
    every = evaluator.sample_realizations(tiny, "history", 5, seed=1, cells=cells, walkin_fraction=1.0)
    assert all(sum(r.steerable.values()) == 0 for r in every)


def test_history_sampling_is_seeded(tiny, cells):
    """Test that the same seed draws the same realizations"""
    evaluator = PlanEvaluator()
    first = evaluator.sample_realizations(tiny, "history", 4, seed=9, cells=cells, walkin_fraction=0.2, dispersion=5.0)
    second = evaluator.sample_realizations(tiny, "history", 4, seed=9, cells=cells, walkin_fraction=0.2, dispersion=5.0)
    assert first == second


def test_aggregate_realization(tiny, cells):
    """Test summing cell demands onto origins"""
    inst = tiny.model_copy(update={"origins": [tiny.origins[0], tiny.origins[0].model_copy(update={"id": "v2"})]})
    r = Realization(id=0, steerable={"c1": 1, "c2": 2, "c3": 4}, walkin={"c1": 1, "c2": 0, "c3": 3}, level="cell")
    aggregated = aggregate_realization(inst, cells, r)
    assert aggregated.level == "origin"
    assert aggregated.steerable == {"v1": 3, "v2": 4}
    assert aggregated.walkin == {"v1": 1, "v2": 3}


def test_budgeted_samples_in_set(robust_instance):
    """Test that budgeted-set samples satisfy every box and budget row"""
    samples = PlanEvaluator().sample_realizations(robust_instance, "budgeted-set", 200, seed=2)
    unc = robust_instance.uncertainty
    for r in samples:
        assert r.provenance == "budget-set"
        for o in robust_instance.origins:
            assert o.steerable_lo <= r.steerable[o.id] <= o.steerable_hi
            assert o.walkin_lo <= r.walkin[o.id] <= o.walkin_hi
        assert sum(r.steerable.values()) <= unc.gamma_steerable
        assert sum(r.walkin.values()) <= unc.gamma_walkin


def test_sampling_fallback():
    """Test the exact sampler behind rejection sampling and the error without it"""
    rng = np.random.default_rng(0)
    lo = np.zeros(10, dtype=np.int64)
    hi = np.full(10, 10, dtype=np.int64)
    draws = sample_budgeted_box(rng, lo, hi, 5, 50, max_draws=10)
    assert draws.shape == (50, 10)
    assert (draws >= 0).all() and (draws.sum(axis=1) <= 5).all()
    with pytest.raises(SamplingError):
        sample_budgeted_box(rng, lo, hi, 5, 50, max_draws=10, exact_fallback=False)


def test_budget_below_lower_bounds():
    """Test that an empty set cannot be sampled"""
    with pytest.raises(SamplingError):
        sample_budgeted_box(np.random.default_rng(0), np.array([3, 3]), np.array([5, 5]), 5, 1, max_draws=10)


def test_outbreaks_identity(cells):
    """Test that no outbreak centers leave a realization unchanged"""
    r = Realization(id=0, steerable={"c1": 2, "c2": 1, "c3": 5}, walkin={"c1": 1, "c2": 0, "c3": 2}, level="cell")
    assert PlanEvaluator().apply_outbreaks(cells, r, k=0) == r


def test_outbreaks_isolated_center():
    """Test that an isolated center doubles only its own cell"""
    cells = [Cell(id="c1", coord=(0.0, 0.0)), Cell(id="c2", coord=(10.0, 0.0))]
    r = Realization(id=0, steerable={"c1": 3, "c2": 3}, walkin={"c1": 1, "c2": 1}, level="cell")
    out = PlanEvaluator().apply_outbreaks(cells, r, k=1, radius_km=1.0, factor=2, seed=4)
    assert sorted(out.steerable.values()) == [3, 6]
    assert sorted(out.walkin.values()) == [1, 2]
    assert out.provenance == "outbreak-perturbed"


def test_outbreaks_overlap():
    """Test that cells in two overlapping zones are multiplied twice"""
    cells = [Cell(id="c1", coord=(0.0, 0.0)), Cell(id="c2", coord=(0.5, 0.0))]
    r = Realization(id=0, steerable={"c1": 3, "c2": 1}, walkin={"c1": 1, "c2": 2}, level="cell")
    out = PlanEvaluator().apply_outbreaks(cells, r, k=2, radius_km=1.0, factor=2)
    assert out.steerable == {"c1": 12, "c2": 4}
    assert out.walkin == {"c1": 4, "c2": 8}


def test_outbreaks_need_cells(tiny):
    """Test that origin-level realizations are rejected"""
    with pytest.raises(ValueError):
        PlanEvaluator().apply_outbreaks([], nominal_realization(tiny), k=1)


def test_evaluate_and_emit(robust_instance, backend, tmp_path):
    """Test the report tables and their CSV headers"""
    plan = BendersSolver(backend).solve_benders(robust_instance).plan
    evaluator = PlanEvaluator()
    realizations = evaluator.sample_realizations(robust_instance, "interval-set", 20, seed=3)
    report = evaluator.evaluate_models(robust_instance, {"det-benders": plan}, realizations)
    assert len(report.rows) == 20
    assert report.summary[0].cost == plan.cost
    assert report.ecdf[-1].cdf == pytest.approx(1.0)
    assert [p.violations for p in report.ecdf] == sorted(p.violations for p in report.ecdf)

    paths = evaluator.emit_report(report, tmp_path)
    assert list(pd.read_csv(paths["violations"]).columns) == ["model", "realization_id", "violations"]
    assert list(pd.read_csv(paths["summary"]).columns) == ["model", "mean", "max", "p95", "cost"]
    assert list(pd.read_csv(paths["ecdf"]).columns) == ["model", "violations", "cdf"]
    assert len(pd.read_csv(paths["violations"])) == 20
