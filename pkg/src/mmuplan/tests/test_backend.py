import pytest

from mmuplan.backends import PulpBackend, SolverConfig, get_backend


def knapsack(backend):
    handle = backend.new_model("max", "knapsack")
    a = backend.add_var(handle, "a", 0, 1, integer=True)
    b = backend.add_var(handle, "b", 0, 1, integer=True)
    c = backend.add_var(handle, "c", 0, 1, integer=True)
    backend.add_linear_constraint(handle, {a: 3, b: 4, c: 5}, "<=", 8, "weight")
    backend.set_objective(handle, {a: 4, b: 5, c: 7})
    return handle


def test_small_milp(backend):
    """Test solving a small knapsack to optimality"""
    outcome = backend.solve(knapsack(backend))
    assert outcome.status == "optimal"
    assert outcome.objective == pytest.approx(11)
    assert outcome.rounded("a") == 1 and outcome.rounded("c") == 1


def test_incremental_rows(backend):
    """Test that rows added after a solve are picked up by the next solve"""
    handle = knapsack(backend)
    backend.solve(handle)
    outcome = backend.add_constraint_and_resolve(handle, {"c": 1}, "<=", 0, "no_c")
    assert outcome.status == "optimal"
    assert outcome.objective == pytest.approx(9)


def test_infeasible(backend):
    """Test an infeasible model"""
    handle = backend.new_model("min", "infeasible")
    x = backend.add_var(handle, "x", 0, 5, integer=True)
    backend.add_linear_constraint(handle, {x: 1}, ">=", 7)
    backend.set_objective(handle, {x: 1})
    assert backend.solve(handle).status == "infeasible"


def test_violated_constant_row(backend):
    """Test that a row without variables that cannot hold makes the model infeasible"""
    handle = backend.new_model("min", "constant")
    x = backend.add_var(handle, "x", 0, 1)
    backend.add_linear_constraint(handle, {x: 0}, ">=", 3, "impossible")
    assert handle.violated_constant_rows == ["impossible"]
    assert backend.solve(handle).status == "infeasible"


def test_bounds_only(backend):
    """Test that a model without rows is solved from the variable bounds"""
    handle = backend.new_model("min", "bounds")
    backend.add_var(handle, "x", 2, 9)
    backend.add_var(handle, "y", 0, 4)
    backend.set_objective(handle, {"x": 1, "y": -2}, constant=1.5)
    outcome = backend.solve(handle)
    assert outcome.status == "optimal"
    assert outcome.values == {"x": 2, "y": 4}
    assert outcome.objective == pytest.approx(2 - 8 + 1.5)


def test_objective_constant(backend):
    """Test that the objective constant is reported with the solution"""
    handle = knapsack(backend)
    handle.sense = "max"
    backend.set_objective(handle, {"a": 4, "b": 5, "c": 7}, constant=10)
    assert backend.solve(handle).objective == pytest.approx(21)


def test_declaration_errors(backend):
    """Test duplicate variables and undeclared references"""
    handle = backend.new_model()
    backend.add_var(handle, "x")
    with pytest.raises(ValueError):
        backend.add_var(handle, "x")
    with pytest.raises(ValueError):
        backend.add_var(handle, "z", lo=3, hi=1)
    with pytest.raises(ValueError):
        backend.add_linear_constraint(handle, {"y": 1}, "<=", 1)
    with pytest.raises(ValueError):
        backend.set_objective(handle, {"y": 1})


def test_get_backend(monkeypatch):
    """Test backend selection by name and environment"""
    monkeypatch.setenv("MMUPLAN_BACKEND", "highs")
    assert get_backend().name == "pulp-highs"
    assert get_backend("cbc", SolverConfig(threads=2)).config.threads == 2
    with pytest.raises(ValueError):
        get_backend("gurobi")


def test_highs_backend():
    """Test the HiGHS backend when highspy is installed"""
    pytest.importorskip("highspy")
    backend = PulpBackend("highs")
    outcome = backend.solve(knapsack(backend))
    assert outcome.status == "optimal"
    assert outcome.objective == pytest.approx(11)
