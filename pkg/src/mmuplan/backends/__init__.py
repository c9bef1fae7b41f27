import os
from typing import Optional

from .base import BaseBackend, ModelHandle, SolveOutcome, SolverConfig
from .pulp_backend import PulpBackend


def get_backend(name: Optional[str] = None, config: Optional[SolverConfig] = None) -> BaseBackend:
    """Backend by name ("cbc" or "highs"); defaults to $MMUPLAN_BACKEND, then CBC."""
    name = name or os.environ.get("MMUPLAN_BACKEND", "cbc")
    return PulpBackend(solver=name.lower(), config=config)


__all__ = [
    'BaseBackend',
    'ModelHandle',
    'SolveOutcome',
    'SolverConfig',
    'PulpBackend',
    'get_backend'
]
