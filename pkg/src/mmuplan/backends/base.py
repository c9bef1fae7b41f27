from abc import ABC, abstractmethod
from typing import Any, Dict, List, Literal, Optional
import logging

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

Sense = Literal["<=", ">=", "=="]


class SolverConfig(BaseModel):
    time_limit: Optional[float] = None  # seconds
    threads: int = Field(default=1, ge=1)
    gap_tolerance: float = Field(default=1e-4, ge=0.0)
    msg: bool = False


class Variable(BaseModel):
    name: str
    lo: float = 0.0
    hi: Optional[float] = None
    integer: bool = False


class LinearConstraint(BaseModel):
    name: str
    coefficients: Dict[str, float]
    sense: Sense
    rhs: float


class SolveOutcome(BaseModel):
    status: Literal["optimal", "infeasible", "unbounded", "limit"]
    objective: Optional[float] = None
    values: Dict[str, float] = Field(default_factory=dict)
    gap: Optional[float] = None  # relative gap bound, 0.0 for pure LPs

    @property
    def has_values(self) -> bool:
        return bool(self.values)

    def value(self, name: str) -> float:
        return self.values.get(name, 0.0)

    def rounded(self, name: str) -> int:
        return int(round(self.values.get(name, 0.0)))


class ModelHandle(BaseModel):
    """Backend-agnostic record of a linear model; ``native`` holds the backend's own state."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    sense: Literal["min", "max"] = "min"
    variables: Dict[str, Variable] = Field(default_factory=dict)
    constraints: List[LinearConstraint] = Field(default_factory=list)
    objective: Dict[str, float] = Field(default_factory=dict)
    objective_constant: float = 0.0
    violated_constant_rows: List[str] = Field(default_factory=list)
    native: Any = Field(default=None, exclude=True)

    @property
    def n_integer(self) -> int:
        return sum(1 for var in self.variables.values() if var.integer)


class BaseBackend(ABC):
    """Base class for exact MILP backends.

    Models are recorded on a ModelHandle by the concrete methods below; subclasses only
    translate and solve. Constraints added after a solve are picked up by the next one.
    """

    name = "base"

    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or SolverConfig()

    def new_model(self, sense: Literal["min", "max"] = "min", name: str = "model") -> ModelHandle:
        return ModelHandle(name=name, sense=sense)

    def add_var(
        self,
        handle: ModelHandle,
        name: str,
        lo: float = 0.0,
        hi: Optional[float] = None,
        integer: bool = False,
    ) -> str:
        if name in handle.variables:
            raise ValueError(f"variable '{name}' already declared in model '{handle.name}'")
        if hi is not None and lo > hi:
            raise ValueError(f"variable '{name}' has lo={lo} > hi={hi}")
        handle.variables[name] = Variable.model_construct(name=name, lo=lo, hi=hi, integer=integer)
        return name

    def add_linear_constraint(
        self,
        handle: ModelHandle,
        coefficients: Dict[str, float],
        sense: Sense,
        rhs: float,
        name: Optional[str] = None,
    ) -> str:
        name = name or f"c{len(handle.constraints) + len(handle.violated_constant_rows)}"
        unknown = [var for var in coefficients if var not in handle.variables]
        if unknown:
            raise ValueError(f"constraint '{name}' references undeclared variables {unknown[:5]}")
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"Unknown constraint sense: {sense}")

        coefficients = {var: coef for var, coef in coefficients.items() if coef != 0}
        if not coefficients:
            holds = (0 <= rhs) if sense == "<=" else (0 >= rhs) if sense == ">=" else (rhs == 0)
            if not holds:
                logger.debug(f"constant row '{name}' (0 {sense} {rhs}) is violated")
                handle.violated_constant_rows.append(name)
            return name

        handle.constraints.append(
            LinearConstraint.model_construct(name=name, coefficients=coefficients, sense=sense, rhs=rhs)
        )
        return name

    def set_objective(self, handle: ModelHandle, coefficients: Dict[str, float], constant: float = 0.0) -> None:
        unknown = [var for var in coefficients if var not in handle.variables]
        if unknown:
            raise ValueError(f"objective references undeclared variables {unknown[:5]}")
        handle.objective = dict(coefficients)
        handle.objective_constant = constant

    def solve(self, handle: ModelHandle, config: Optional[SolverConfig] = None) -> SolveOutcome:
        config = config or self.config
        if handle.violated_constant_rows:
            return SolveOutcome(status="infeasible")
        if not handle.constraints:
            return self._solve_bounds_only(handle)
        return self._solve(handle, config)

    def _solve_bounds_only(self, handle: ModelHandle) -> SolveOutcome:
        """Without rows every variable sits at the bound its objective coefficient points to."""
        values: Dict[str, float] = {}
        for name, var in handle.variables.items():
            coef = handle.objective.get(name, 0.0)
            if handle.sense == "max":
                coef = -coef
            if coef > 0 or (coef == 0 and var.lo > float("-inf")):
                values[name] = var.lo
            elif var.hi is not None:
                values[name] = var.hi
            else:
                return SolveOutcome(status="unbounded")
        return SolveOutcome(status="optimal", objective=self.objective_of(handle, values), values=values, gap=0.0)

    def add_constraint_and_resolve(
        self,
        handle: ModelHandle,
        coefficients: Dict[str, float],
        sense: Sense,
        rhs: float,
        name: Optional[str] = None,
        config: Optional[SolverConfig] = None,
    ) -> SolveOutcome:
        self.add_linear_constraint(handle, coefficients, sense, rhs, name)
        return self.solve(handle, config)

    def objective_of(self, handle: ModelHandle, values: Dict[str, float]) -> float:
        return handle.objective_constant + sum(coef * values.get(var, 0.0) for var, coef in handle.objective.items())

    @abstractmethod
    def _solve(self, handle: ModelHandle, config: SolverConfig) -> SolveOutcome:
        """Translate the handle into the native model, solve it and map the result."""
        pass
