from . import cli
from .orchestration import PlanningOrchestrator
import asyncio
import sys
from .models import (
    Site,
    Practice,
    DemandOrigin,
    ConsiderationEntry,
    UncertaintyModel,
    Instance,
    ExpandedInstance,
    Plan,
    SolveResult,
    SeparationResult,
    GeneratorConfig,
    Realization,
    EvaluationReport
)

def main():
    """Main entry point for the package."""
    sys.exit(asyncio.run(cli.main()))

# Expose the core components
__all__ = ['main', 'cli', 'PlanningOrchestrator']
