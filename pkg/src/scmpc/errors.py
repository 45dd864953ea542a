"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class InfeasibleError(RuntimeError):
    """A scenario is infeasible at its initial step."""


class NumericalError(RuntimeError):
    """An iterative numerical procedure failed to converge."""
