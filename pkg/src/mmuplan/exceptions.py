class InstanceSchemaError(ValueError):
    """Raised when an instance or plan file cannot be parsed into the schema."""


class AssumptionViolationError(ValueError):
    """Raised when a residual capacity is negative where a flow network needs it nonnegative."""


class InfeasiblePlanError(ValueError):
    """Raised when a steerable assignment is requested from a non-saturating flow."""


class SizeGuardError(ValueError):
    """Raised when exhaustive enumeration is requested beyond its size guard."""


class SamplingError(RuntimeError):
    """Raised when rejection sampling runs out of draws."""
