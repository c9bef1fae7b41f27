import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from pydantic import BaseModel, ValidationError

from ..exceptions import InstanceSchemaError
from ..models import Cell, DemandOrigin, ExpandedInstance, Instance, Plan, Practice, Site, UncertaintyModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _load_json(path: PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InstanceSchemaError(f"{path}: malformed JSON ({e})") from e


def _dump_json(data: Any, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=False)
        f.write("\n")


def _warn_unknown(where: str, data: Any, model: type[BaseModel]) -> None:
    if not isinstance(data, dict):
        return
    unknown = sorted(set(data) - set(model.model_fields))
    if unknown:
        logger.warning(f"{where}: ignoring unknown fields {unknown}")


def read_instance(path: PathLike) -> Instance:
    """Read an instance JSON file, warning about (and ignoring) unknown fields."""
    data = _load_json(path)
    if not isinstance(data, dict):
        raise InstanceSchemaError(f"{path}: top level must be an object")

    model = ExpandedInstance if "sessions" in data else Instance
    _warn_unknown(str(path), data, model)
    for key, entity in (("sites", Site), ("practices", Practice), ("origins", DemandOrigin)):
        for i, item in enumerate(data.get(key) or []):
            _warn_unknown(f"{path}: {key}[{i}]", item, entity)
    _warn_unknown(f"{path}: uncertainty", data.get("uncertainty"), UncertaintyModel)

    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise InstanceSchemaError(f"{path}: {e}") from e


def write_instance(inst: Instance, path: PathLike) -> None:
    _dump_json(inst.model_dump(mode="json", exclude_none=True), path)


PLAN_RUN_FIELDS = ("model", "status", "objective", "iterations", "schedule")


def read_plan(path: PathLike) -> Plan:
    data = _load_json(path)
    if not isinstance(data, dict):
        raise InstanceSchemaError(f"{path}: top level must be an object")
    data = {k: v for k, v in data.items() if k not in PLAN_RUN_FIELDS}
    _warn_unknown(str(path), data, Plan)
    try:
        return Plan.model_validate(data)
    except ValidationError as e:
        raise InstanceSchemaError(f"{path}: {e}") from e


def write_plan(plan: Plan, path: PathLike, extra: Dict[str, Any] = None) -> None:
    data = plan.model_dump(mode="json", exclude_none=True, exclude={"walkin_matrix"})
    if extra:
        data.update(extra)
    _dump_json(data, path)


def read_cells(path: PathLike) -> Tuple[List[Cell], Dict[str, Any]]:
    """Read the generator's cells sidecar: (cells, metadata)."""
    data = _load_json(path)
    try:
        cells = [Cell.model_validate(item) for item in data.get("cells", [])]
    except (ValidationError, AttributeError) as e:
        raise InstanceSchemaError(f"{path}: {e}") from e
    return cells, {k: v for k, v in data.items() if k != "cells"}


def write_cells(cells: List[Cell], path: PathLike, metadata: Dict[str, Any] = None) -> None:
    data = dict(metadata or {})
    data["cells"] = [cell.model_dump(mode="json") for cell in cells]
    _dump_json(data, path)
