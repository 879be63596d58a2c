"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class ScheduleError(ArithmeticError):
    """The impact schedule cannot be formed for the given distribution.

    ``t`` names the offending step when one is known.
    """

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DivergenceError(ArithmeticError):
    """A tail sum does not converge."""


class CalibrationError(ArithmeticError):
    """Scale calibration produced a degenerate or non-positive answer."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IdentityViolation(ArithmeticError):
    """A closed-form identity failed to hold within tolerance."""


class ConfigError(ValueError):
    """A run configuration is invalid."""
