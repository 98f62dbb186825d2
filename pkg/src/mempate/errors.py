"""Exception hierarchy shared across the package."""


class MemPateError(Exception):
    """Base class; ``module`` names the subsystem that raised."""

    module = "mempate"


class DataError(MemPateError, ValueError):
    module = "data"


class DegenerateOutcomeError(DataError):
    """Outcome vector has zero range and cannot be standardized."""


class SingularDesignError(MemPateError, ValueError):
    module = "blm"

    def __init__(self, message, dependent_columns=()):
        super().__init__(message)
        self.dependent_columns = tuple(dependent_columns)


class DegenerateFitError(MemPateError, ValueError):
    """Least-squares residual variance is zero."""

    module = "blm"


class NumericalError(MemPateError, ArithmeticError):
    module = "linalg"


class BartError(MemPateError, ValueError):
    module = "bart"


class MemError(MemPateError):
    """A per-pattern or per-block failure, annotated with where it happened."""

    module = "mem"

    def __init__(self, message, pattern=None, block=None):
        super().__init__(message)
        self.pattern = pattern
        self.block = block


class ConfigError(MemPateError, ValueError):
    module = "cli"
