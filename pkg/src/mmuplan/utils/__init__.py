from .planning import (
    validate_instance,
    closest_operating_facility,
    closest_routes,
    operating_sites,
    plan_cost,
    normalize_walkin_assignment,
    trim_steerable_assignment,
    expand_sessions,
    flatten_plan,
    split_evenly,
)
from .io_utils import read_instance, write_instance, read_plan, write_plan, read_cells, write_cells
from .maxflow import (
    ResidualCapacities,
    FlowNetwork,
    FlowResult,
    residual_capacities,
    build_benders_network,
    max_flow,
    min_cut,
    recover_assignment,
)

__all__ = [
    'validate_instance',
    'closest_operating_facility',
    'closest_routes',
    'operating_sites',
    'plan_cost',
    'normalize_walkin_assignment',
    'trim_steerable_assignment',
    'expand_sessions',
    'flatten_plan',
    'split_evenly',
    'read_instance',
    'write_instance',
    'read_plan',
    'write_plan',
    'read_cells',
    'write_cells',
    'ResidualCapacities',
    'FlowNetwork',
    'FlowResult',
    'residual_capacities',
    'build_benders_network',
    'max_flow',
    'min_cut',
    'recover_assignment',
]
