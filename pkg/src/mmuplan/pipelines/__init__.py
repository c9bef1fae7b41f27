from .formulation import PlanVariables, add_plan_rows, extract_plan
from .compact import CompactModel, CompactSolver
from .benders import (
    BendersSolver,
    MasterModel,
    add_feasibility_cut,
    build_master,
    enforce_assumption1,
    evaluate_cut,
    separate_lp,
    separate_mincut,
)
from .robust import (
    RobustSolver,
    budgeted_cut_slack,
    build_subsetsum_reduction,
    separate_budgeted_bruteforce,
    worst_case_copy,
    worst_case_steerable,
    worst_case_walkin,
)
from .instance_generator import InstanceGenerator, derive_budgets, derive_demands, round_half_up
from .evaluator import PlanEvaluator, aggregate_realization, nominal_realization

__all__ = [
    'PlanVariables',
    'add_plan_rows',
    'extract_plan',
    'CompactModel',
    'CompactSolver',
    'BendersSolver',
    'MasterModel',
    'add_feasibility_cut',
    'build_master',
    'enforce_assumption1',
    'evaluate_cut',
    'separate_lp',
    'separate_mincut',
    'RobustSolver',
    'budgeted_cut_slack',
    'build_subsetsum_reduction',
    'separate_budgeted_bruteforce',
    'worst_case_copy',
    'worst_case_steerable',
    'worst_case_walkin',
    'InstanceGenerator',
    'derive_budgets',
    'derive_demands',
    'round_half_up',
    'PlanEvaluator',
    'aggregate_realization',
    'nominal_realization'
]
