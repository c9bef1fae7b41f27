import pytest

from mmuplan.pipelines import BendersSolver, CompactSolver
from mmuplan.utils import expand_sessions

from .conftest import brute_force_optimum, random_instance


def test_compact_variables(tiny, backend):
    """Test the variables of the compact model"""
    model = CompactSolver(backend).build_compact(tiny)
    assert len(model.y) == 1 and len(model.x) == 1 and len(model.w) == 2 and len(model.z) == 2
    assert len(model.handle.variables) == 6


def test_compact_tiny(tiny, backend):
    """Test the compact optimum of the tiny instance"""
    result = CompactSolver(backend).solve_compact(tiny)
    assert result.status == "optimal"
    assert result.objective == 4
    assert result.plan.sessions == {"l1": 2}
    assert result.plan.setup == {"l1": 1}
    assert result.plan.walkin_route == {"v1": "p1"}
    assert sum(result.plan.steerable_assign["v1"].values()) == 30
    assert result.plan.cost == 4


def test_compact_infeasible(tiny, backend):
    """Test that walk-ins above the practice capacity make the model infeasible"""
    inst = tiny.model_copy(update={"origins": [tiny.origins[0].model_copy(update={"walkin_nominal": 5})]})
    result = CompactSolver(backend).solve_compact(inst)
    assert result.status == "infeasible"
    assert not result.has_plan


def test_compact_expanded(tiny, backend):
    """Test the session-expanded compact model against enumeration of session vectors"""
    expanded = expand_sessions(tiny, ["AM", "PM"])
    model = CompactSolver(backend).build_compact(expanded)
    assert all(model.handle.variables[var].hi == 1 for var in model.x.values())
    assert any(c.name == "setup[l1@PM]" for c in model.handle.constraints)

    result = CompactSolver(backend).solve_compact(expanded)
    assert result.status == "optimal"
    assert result.objective == brute_force_optimum(expanded) == 4


@pytest.mark.parametrize("seed", range(8))
def test_compact_matches_enumeration(seed, backend):
    """Test the compact optimum against enumeration on random instances"""
    inst = random_instance(seed, n_origins=5, n_sites=3, max_sessions=2)
    expected = brute_force_optimum(inst)
    result = CompactSolver(backend).solve_compact(inst)
    if expected is None:
        assert result.status == "infeasible"
    else:
        assert result.status == "optimal"
        assert result.objective == expected


@pytest.mark.parametrize("seed", range(10))
def test_compact_expanded_matches_enumeration(seed, backend):
    """Test compact and Benders on session-expanded random instances against enumeration of binary session vectors"""
    base = random_instance(100 + seed, n_origins=3, n_sites=2, n_practices=1)
    expanded = expand_sessions(base, ["MO", "TU", "WE"])
    expected = brute_force_optimum(expanded)
    results = [
        CompactSolver(backend).solve_compact(expanded),
        BendersSolver(backend).solve_benders(expanded, "mincut"),
        BendersSolver(backend).solve_benders(expanded, "lp"),
    ]
    for result in results:
        if expected is None:
            assert result.status == "infeasible"
        else:
            assert result.status == "optimal"
            assert result.objective == expected
