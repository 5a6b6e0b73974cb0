"""Exception types shared across the toolkit."""


class NestmcError(Exception):
    """Base class for toolkit-specific failures."""


class InfeasiblePlanError(NestmcError, ValueError):
    """A requested precision/budget cannot be met by any admissible plan.

    The message names the violated constraint (e.g. ``|mu_tilde| >= epsilon``).
    """


class BudgetInfeasibleError(InfeasiblePlanError):
    """No plan within the bisection bracket realizes the requested budget."""


class NonFiniteSampleError(NestmcError, RuntimeError):
    """A sampled payoff came back NaN/inf; silently skipping it would bias I."""

    def __init__(self, level: int, index: int):
        self.level = level
        self.index = index
        super().__init__(
            f"non-finite sample at level {level}, outer index {index}; "
            "aborting estimation (skipping would bias the estimate)"
        )


class ConfigError(NestmcError, ValueError):
    """A config file violates the documented schema; message carries the field path."""
