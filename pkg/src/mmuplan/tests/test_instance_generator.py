import numpy as np
import pytest

from mmuplan.models import DemandHistory, GeneratorConfig
from mmuplan.pipelines import InstanceGenerator, derive_budgets, derive_demands, round_half_up
from mmuplan.pipelines.instance_generator import DEMAND_FIELDS, clamp_budgets, sample_weekly_visits
from mmuplan.utils import validate_instance

SMALL = dict(n_cells=36, n_sites=4, n_practices=3, extent_km=5.0, max_distance_km=10.0, weeks=12)


def test_round_half_up():
    """Test rounding halves upwards"""
    assert round_half_up(2.5) == 3
    assert round_half_up(0.5) == 1
    assert round_half_up(9.49) == 9
    assert round_half_up(808.2) == 808


@pytest.mark.parametrize("omega,expected", [(0.2, (3233, 808)), (0.45, (2223, 1818)), (0.0, (4041, 0))])
def test_derive_budgets(omega, expected):
    """Test budgets from the largest weekly total demand"""
    history = DemandHistory(weekly={"c1": [2000, 1000, 3000], "c2": [2041, 5, 1000]})
    assert derive_budgets(history, omega) == expected


def test_derive_demands_bounds():
    """Test nominal demands and bounds from weekly minimum, average and maximum"""
    demands = derive_demands(DemandHistory(weekly={"c1": [4, 16]}), 0.25)["c1"]
    assert demands["walkin_lo"] == 1
    assert demands["steerable_lo"] == 3
    assert demands["walkin_hi"] == 4
    assert demands["steerable_hi"] == 12
    assert demands["walkin_nominal"] == 3
    assert demands["steerable_nominal"] == 7


def test_derive_demands_constant():
    """Test a constant history"""
    demands = derive_demands(DemandHistory(weekly={"c1": [10] * 6}), 0.2)["c1"]
    assert demands["walkin_nominal"] == demands["walkin_lo"] == demands["walkin_hi"] == 2
    assert demands["steerable_nominal"] == demands["steerable_lo"] == demands["steerable_hi"] == 8


def test_derive_demands_average_rounds_half_up():
    """Test that an average of 9.5 becomes 10"""
    demands = derive_demands(DemandHistory(weekly={"c1": [9, 10]}), 0.0)["c1"]
    assert demands["steerable_nominal"] == 10
    assert demands["walkin_nominal"] == 0


def test_empty_history():
    """Test that an empty history is rejected"""
    with pytest.raises(ValueError):
        derive_budgets(DemandHistory(weekly={}), 0.2)


def test_generator_is_deterministic():
    """Test that the same seed gives the same instance and cells"""
    first = InstanceGenerator(GeneratorConfig(seed=7, **SMALL)).generate()
    second = InstanceGenerator(GeneratorConfig(seed=7, **SMALL)).generate()
    assert first[0] == second[0]
    assert first[1] == second[1]
    other = InstanceGenerator(GeneratorConfig(seed=8, **SMALL)).generate()
    assert other[0] != first[0]


def test_geometry_parameters():
    """Test facility parameters of the generated geometry"""
    cells, sites, practices, distances = InstanceGenerator(GeneratorConfig(seed=1, **SMALL)).generate_geometry()
    assert len(cells) == 36
    assert distances.shape == (36, 7)
    assert all(206 <= p.capacity <= 602 for p in practices)
    assert all(s.session_cap == 10 and s.setup_cost == 2 for s in sites)


def test_default_scale():
    """Test the default number of sites and practices"""
    cfg = GeneratorConfig()
    assert (cfg.n_sites, cfg.n_practices, cfg.session_capacity) == (28, 16, 28)


def test_zero_facilities():
    """Test that a geometry needs at least one facility"""
    with pytest.raises(ValueError):
        InstanceGenerator(GeneratorConfig(n_sites=0, n_practices=0)).generate_geometry()


def test_generated_instance_is_valid():
    """Test that generated nominal demands lie in their uncertainty sets"""
    inst, cells = InstanceGenerator(GeneratorConfig(seed=3, **SMALL)).generate()
    assert validate_instance(inst) == []
    for o in inst.origins:
        assert o.steerable_lo <= o.steerable_nominal <= o.steerable_hi
        assert o.walkin_lo <= o.walkin_nominal <= o.walkin_hi
    unc = inst.uncertainty
    assert sum(o.steerable_nominal for o in inst.origins) <= unc.gamma_steerable
    assert sum(o.walkin_nominal for o in inst.origins) <= unc.gamma_walkin
    assert all(cell.origin_id in inst.origin_by_id() for cell in cells)


def test_aggregation_preserves_totals():
    """Test that merging cells keeps every demand total"""
    gen = InstanceGenerator(GeneratorConfig(seed=4, **SMALL))
    cells, sites, practices, distances = gen.generate_geometry()
    history = gen.simulate_weekly_demands(cells)
    cell_demands = derive_demands(history, 0.3)
    ids = [s.id for s in sites] + [p.id for p in practices]
    origins, tagged = gen.aggregate_cells(cells, ids, distances, cell_demands)
    for field in DEMAND_FIELDS:
        assert sum(getattr(o, field) for o in origins) == sum(d[field] for d in cell_demands.values())
    assert len(origins) <= len(cells)


def test_consideration_is_distance_ball():
    """Test that every origin considers exactly the facilities within the driving distance"""
    gen = InstanceGenerator(GeneratorConfig(seed=5, **{**SMALL, "max_distance_km": 3.0}))
    cells, sites, practices, distances = gen.generate_geometry()
    ids = [s.id for s in sites] + [p.id for p in practices]
    zeros = {cell.id: dict.fromkeys(DEMAND_FIELDS, 0) for cell in cells}
    origins, tagged = gen.aggregate_cells(cells, ids, distances, zeros)
    by_id = {o.id: o for o in origins}
    for i, cell in enumerate(tagged):
        within = {fid for k, fid in enumerate(ids) if distances[i, k] <= 3000}
        assert set(by_id[cell.origin_id].facility_ids) == within


def test_clamp_budgets():
    """Test that budgets move into the range that keeps the nominal demands inside"""
    inst, _ = InstanceGenerator(GeneratorConfig(seed=3, **SMALL)).generate()
    total_hi = sum(o.steerable_hi for o in inst.origins)
    g1, g2, clamps = clamp_budgets(inst.origins, total_hi + 50, 0)
    assert g1 == total_hi
    assert g2 == max(sum(o.walkin_lo for o in inst.origins), sum(o.walkin_nominal for o in inst.origins))
    assert len(clamps) == 2 or g2 == 0


def test_zero_mean_cells():
    """Test that zero means give zero visits"""
    draws = sample_weekly_visits(np.random.default_rng(0), np.array([0.0, 0.0]), 10, 5.0)
    assert draws.sum() == 0


def test_poisson_variance():
    """Test that visits without dispersion have variance close to the mean"""
    draws = sample_weekly_visits(np.random.default_rng(11), np.array([4.0]), 10_000, None)
    assert draws.var() == pytest.approx(4.0, rel=0.15)
    assert draws.mean() == pytest.approx(4.0, rel=0.05)
