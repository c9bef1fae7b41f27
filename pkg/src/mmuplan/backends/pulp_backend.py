import logging
import re
from typing import Dict, Optional

import pulp

from .base import BaseBackend, ModelHandle, SolveOutcome, SolverConfig

logger = logging.getLogger(__name__)


class _PulpState:
    """Native problem plus how much of the handle has already been translated."""

    def __init__(self, problem: pulp.LpProblem):
        self.problem = problem
        self.vars: Dict[str, pulp.LpVariable] = {}
        self.n_rows = 0


class PulpBackend(BaseBackend):
    """Backend solving through PuLP with CBC (bundled) or HiGHS (highspy)."""

    SOLVERS = {
        "cbc": "PULP_CBC_CMD",
        "highs": "HiGHS",
    }

    def __init__(self, solver: str = "cbc", config: Optional[SolverConfig] = None):
        super().__init__(config)
        if solver not in self.SOLVERS:
            raise ValueError(f"Unknown solver '{solver}', expected one of {sorted(self.SOLVERS)}")
        self.solver = solver
        self.name = f"pulp-{solver}"

    def _sync(self, handle: ModelHandle) -> _PulpState:
        state = handle.native
        if state is None:
            sense = pulp.LpMinimize if handle.sense == "min" else pulp.LpMaximize
            state = _PulpState(pulp.LpProblem(re.sub(r"\W", "_", handle.name), sense))
            handle.native = state

        new_vars = []
        for name, var in handle.variables.items():
            if name in state.vars:
                continue
            lp_var = pulp.LpVariable(
                f"v{len(state.vars)}",
                lowBound=var.lo,
                upBound=var.hi,
                cat=pulp.LpInteger if var.integer else pulp.LpContinuous,
            )
            state.vars[name] = lp_var
            new_vars.append(lp_var)
        if new_vars:
            state.problem.addVariables(new_vars)

        for constraint in handle.constraints[state.n_rows:]:
            expr = pulp.lpSum(coef * state.vars[var] for var, coef in constraint.coefficients.items())
            if constraint.sense == "<=":
                row = expr <= constraint.rhs
            elif constraint.sense == ">=":
                row = expr >= constraint.rhs
            else:
                row = expr == constraint.rhs
            state.problem.addConstraint(row, name=f"r{state.n_rows}")
            state.n_rows += 1

        state.problem.setObjective(
            pulp.lpSum(coef * state.vars[var] for var, coef in handle.objective.items()) + handle.objective_constant
        )
        return state

    def _solve(self, handle: ModelHandle, config: SolverConfig) -> SolveOutcome:
        state = self._sync(handle)
        solver = pulp.getSolver(
            self.SOLVERS[self.solver],
            msg=config.msg,
            timeLimit=config.time_limit,
            gapRel=config.gap_tolerance,
            threads=config.threads,
        )
        try:
            state.problem.solve(solver)
        except pulp.PulpSolverError as e:
            logger.error(f"{self.name} failed on '{handle.name}': {e}")
            return SolveOutcome(status="limit")

        status = state.problem.status
        sol_status = getattr(state.problem, "sol_status", None)

        if sol_status == pulp.LpSolutionOptimal or (sol_status is None and status == pulp.LpStatusOptimal):
            result = "optimal"
        elif sol_status == pulp.LpSolutionIntegerFeasible:
            result = "limit"
        elif status == pulp.LpStatusInfeasible or sol_status == pulp.LpSolutionInfeasible:
            return SolveOutcome(status="infeasible")
        elif status == pulp.LpStatusUnbounded or sol_status == pulp.LpSolutionUnbounded:
            return SolveOutcome(status="unbounded")
        else:
            logger.warning(f"{self.name} stopped on '{handle.name}' without a solution ({pulp.LpStatus[status]})")
            return SolveOutcome(status="limit")

        values: Dict[str, float] = {}
        for name, lp_var in state.vars.items():
            value = lp_var.varValue
            if value is None:
                value = handle.variables[name].lo
            if handle.variables[name].integer:
                value = float(round(value))
            values[name] = value

        if result == "optimal":
            gap = config.gap_tolerance if handle.n_integer else 0.0
        else:
            gap = None
        return SolveOutcome(status=result, objective=self.objective_of(handle, values), values=values, gap=gap)
