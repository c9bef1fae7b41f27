from typing import List, Dict, Optional, Any, Tuple, Literal
from pydantic import BaseModel, Field, ConfigDict, model_validator

UncertaintyKind = Literal["deterministic", "interval", "budgeted"]
SolveStatus = Literal["optimal", "infeasible", "unbounded", "limit"]
ModelName = Literal["det-compact", "det-benders", "interval", "budgeted"]


class ConsiderationEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    facility_id: str
    distance_m: int = Field(ge=0)


class Site(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    setup_cost: int = Field(ge=0)  # c_l
    session_cap: int = Field(ge=0)  # b_l, sessions per week
    coord: Optional[Tuple[float, float]] = None


class Practice(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    capacity: int = Field(ge=0)  # treatments per week
    coord: Optional[Tuple[float, float]] = None


class DemandOrigin(BaseModel):
    """A demand origin with nominal demands, bounds and its ordered consideration set.

    Bounds default to the nominal values. ``walkin_consideration`` is only set on
    session-expanded instances; otherwise walk-ins use ``consideration``.
    """

    model_config = ConfigDict(frozen=True)

    id: str
    steerable_nominal: int = Field(default=0, ge=0)
    walkin_nominal: int = Field(default=0, ge=0)
    steerable_lo: int = 0
    steerable_hi: int = 0
    walkin_lo: int = 0
    walkin_hi: int = 0
    consideration: List[ConsiderationEntry] = Field(default_factory=list)
    walkin_consideration: Optional[List[ConsiderationEntry]] = None
    coord: Optional[Tuple[float, float]] = None

    @model_validator(mode="before")
    @classmethod
    def _default_bounds(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            d = data.get("steerable_nominal", 0)
            u = data.get("walkin_nominal", 0)
            data.setdefault("steerable_lo", d)
            data.setdefault("steerable_hi", d)
            data.setdefault("walkin_lo", u)
            data.setdefault("walkin_hi", u)
        return data

    @property
    def facility_ids(self) -> List[str]:
        return [entry.facility_id for entry in self.consideration]

    @property
    def walkin_entries(self) -> List[ConsiderationEntry]:
        if self.walkin_consideration is None:
            return self.consideration
        return self.walkin_consideration

    @property
    def walkin_facility_ids(self) -> List[str]:
        return [entry.facility_id for entry in self.walkin_entries]


class UncertaintyModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: UncertaintyKind = "deterministic"
    gamma_steerable: Optional[int] = None  # budgeted only
    gamma_walkin: Optional[int] = None  # budgeted only


class Instance(BaseModel):
    """A planning instance: facilities, demand origins and global session data.

    ``setup_groups`` is empty for base instances, where every site is its own group.
    Session-expanded instances list, per base site, the expanded sites sharing a setup.
    """

    model_config = ConfigDict(frozen=True)

    name: str = "instance"
    sites: List[Site] = Field(default_factory=list)
    practices: List[Practice] = Field(default_factory=list)
    origins: List[DemandOrigin] = Field(default_factory=list)
    session_cost: int = Field(gt=0)
    session_capacity: int = Field(gt=0)
    uncertainty: UncertaintyModel = Field(default_factory=UncertaintyModel)
    setup_groups: Dict[str, List[str]] = Field(default_factory=dict)
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @property
    def is_session_expanded(self) -> bool:
        return bool(self.setup_groups)

    def site_by_id(self) -> Dict[str, Site]:
        return {site.id: site for site in self.sites}

    def practice_by_id(self) -> Dict[str, Practice]:
        return {practice.id: practice for practice in self.practices}

    def origin_by_id(self) -> Dict[str, DemandOrigin]:
        return {origin.id: origin for origin in self.origins}

    def groups(self) -> Dict[str, List[str]]:
        """Setup group key -> member site ids."""
        if self.setup_groups:
            return {key: list(members) for key, members in self.setup_groups.items()}
        return {site.id: [site.id] for site in self.sites}

    def group_of_site(self) -> Dict[str, str]:
        return {member: key for key, members in self.groups().items() for member in members}

    def steerable_neighbors(self) -> Dict[str, List[str]]:
        """Facility id -> origins whose steerable consideration contains it."""
        neighbors: Dict[str, List[str]] = {f.id: [] for f in [*self.sites, *self.practices]}
        for origin in self.origins:
            for fid in origin.facility_ids:
                neighbors.setdefault(fid, []).append(origin.id)
        return neighbors

    def walkin_neighbors(self) -> Dict[str, List[str]]:
        """Facility id -> origins whose walk-in consideration contains it."""
        neighbors: Dict[str, List[str]] = {f.id: [] for f in [*self.sites, *self.practices]}
        for origin in self.origins:
            for fid in origin.walkin_facility_ids:
                neighbors.setdefault(fid, []).append(origin.id)
        return neighbors


class ExpandedInstance(Instance):
    """Session-expanded instance with the maps back to base facilities and origins."""

    sessions: List[str] = Field(default_factory=list)
    base_facility: Dict[str, Tuple[str, str]] = Field(default_factory=dict)
    base_origin: Dict[str, Tuple[str, str]] = Field(default_factory=dict)


class Plan(BaseModel):
    """A strategic operation plan.

    ``walkin_matrix`` carries the raw 0/1 walk-in indicators of a solver; ``walkin_route``
    is the normalized routing with at most one facility per origin.
    """

    model_config = ConfigDict(frozen=True)

    setup: Dict[str, int] = Field(default_factory=dict)
    sessions: Dict[str, int] = Field(default_factory=dict)
    walkin_route: Dict[str, Optional[str]] = Field(default_factory=dict)
    walkin_matrix: Optional[Dict[str, Dict[str, int]]] = None
    steerable_assign: Optional[Dict[str, Dict[str, int]]] = None
    cost: Optional[int] = None


class SolveResult(BaseModel):
    model: str
    status: SolveStatus
    objective: Optional[int] = None
    plan: Optional[Plan] = None
    iterations: int = 0
    cuts: List[List[str]] = Field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def has_plan(self) -> bool:
        return self.plan is not None


class SeparationResult(BaseModel):
    violated: bool
    subset_U: List[str] = Field(default_factory=list)
    violation: int = 0  # cut slack, negative when violated
    value: float = 0.0  # separation objective
    witness: Dict[str, Any] = Field(default_factory=dict)


class GeneratorConfig(BaseModel):
    seed: int = 0
    n_cells: int = Field(default=225, ge=1)
    n_sites: int = Field(default=28, ge=0)
    n_practices: int = Field(default=16, ge=0)
    extent_km: float = Field(default=20.0, gt=0)
    max_distance_km: float = Field(default=6.0, gt=0)  # Delta
    walkin_fraction: float = Field(default=0.2, ge=0.0, le=1.0)  # omega
    weeks: int = Field(default=52, ge=1)
    demand_mean: float = Field(default=1.5, ge=0.0)
    mean_heterogeneity: float = Field(default=0.5, ge=0.0)
    dispersion: Optional[float] = Field(default=5.0, gt=0)  # None -> Poisson
    road_detour_factor: float = Field(default=1.3, ge=1.0)
    practice_capacity_range: Tuple[int, int] = (206, 602)
    site_session_cap: int = Field(default=10, ge=0)
    site_setup_cost: int = Field(default=2, ge=0)
    session_cost: int = Field(default=1, gt=0)
    session_capacity: int = Field(default=28, gt=0)
    uncertainty: UncertaintyKind = "budgeted"

    @model_validator(mode="after")
    def _check_ranges(self) -> "GeneratorConfig":
        lo, hi = self.practice_capacity_range
        if not 0 <= lo <= hi:
            raise ValueError(f"practice_capacity_range must satisfy 0 <= lo <= hi, got {self.practice_capacity_range}")
        return self


class Cell(BaseModel):
    id: str
    coord: Tuple[float, float]
    mean: float = 0.0
    origin_id: Optional[str] = None


class DemandHistory(BaseModel):
    weekly: Dict[str, List[int]]  # key -> weekly visit counts

    @model_validator(mode="after")
    def _check_lengths(self) -> "DemandHistory":
        lengths = {len(series) for series in self.weekly.values()}
        if len(lengths) > 1:
            raise ValueError(f"weekly series differ in length: {sorted(lengths)}")
        if any(value < 0 for series in self.weekly.values() for value in series):
            raise ValueError("weekly visit counts must be nonnegative")
        return self

    @property
    def weeks(self) -> int:
        return len(next(iter(self.weekly.values()), []))


class Realization(BaseModel):
    id: int
    steerable: Dict[str, int]
    walkin: Dict[str, int]
    level: Literal["cell", "origin"] = "origin"
    provenance: Literal["sampled-history", "budget-set", "interval-set", "outbreak-perturbed", "nominal"] = "sampled-history"

    @model_validator(mode="after")
    def _check_nonnegative(self) -> "Realization":
        if any(v < 0 for v in self.steerable.values()) or any(v < 0 for v in self.walkin.values()):
            raise ValueError(f"realization {self.id} has negative demand")
        return self


class ViolationRow(BaseModel):
    model: str
    realization_id: int
    violations: int = Field(ge=0)


class ModelSummary(BaseModel):
    model: str
    mean: float
    max: int
    p95: float
    cost: Optional[int] = None


class EcdfPoint(BaseModel):
    model: str
    violations: int
    cdf: float


class EvaluationReport(BaseModel):
    rows: List[ViolationRow] = Field(default_factory=list)
    summary: List[ModelSummary] = Field(default_factory=list)
    ecdf: List[EcdfPoint] = Field(default_factory=list)
    failures: Dict[str, str] = Field(default_factory=dict)  # model -> error


class RunConfig(BaseModel):
    """Validated command-line run configuration."""

    command: Literal["generate", "solve", "evaluate", "sweep", "reduce-subsetsum"]
    instance: Optional[str] = None
    model: ModelName = "det-benders"
    sessions: List[str] = Field(default_factory=list)
    steerable_scope: Literal["all_sessions", "same_session"] = "all_sessions"
    separation: Literal["mincut", "lp"] = "mincut"
    interval_method: Literal["benders", "compact"] = "benders"
    initial_pool: Literal["empty", "singletons"] = "empty"
    seed: int = 0
    output: str = "out"
    realizations: int = Field(default=100, ge=1)
    sample_mode: Literal["history", "budgeted-set", "interval-set"] = "history"
    outbreaks: int = Field(default=0, ge=0)
    outbreak_radius_km: float = Field(default=1.0, gt=0)
    outbreak_factor: int = Field(default=2, ge=1)
    plans: Dict[str, str] = Field(default_factory=dict)
    cells: Optional[str] = None
    sweep_models: List[ModelName] = Field(default_factory=lambda: ["det-benders", "budgeted", "interval"])

    @model_validator(mode="after")
    def _check_combinations(self) -> "RunConfig":
        if self.command in ("solve", "evaluate") and not self.instance:
            raise ValueError(f"'{self.command}' needs --instance")
        if self.command == "evaluate":
            if not self.plans:
                raise ValueError("'evaluate' needs at least one --plan MODEL=PATH")
            if self.sample_mode == "history" and not self.cells:
                raise ValueError("history sampling needs --cells (the generator's cells.json)")
            if self.outbreaks and not self.cells:
                raise ValueError("outbreaks need --cells for cell coordinates")
        if self.command == "solve":
            if self.separation == "lp" and self.model in ("det-compact", "budgeted"):
                raise ValueError(f"--separation lp has no effect with --model {self.model}")
            if self.initial_pool != "empty" and self.model not in ("det-benders", "interval"):
                raise ValueError(f"--initial-pool applies to Benders models, not {self.model}")
        if len(set(self.sessions)) != len(self.sessions):
            raise ValueError(f"duplicate session labels: {self.sessions}")
        return self
