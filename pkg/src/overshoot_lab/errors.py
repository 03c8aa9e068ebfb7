"""Exception hierarchy for overshoot_lab."""


class OvershootLabError(Exception):
    """Base class for every error raised by the package."""


class ThetaOutOfRange(OvershootLabError, ValueError):
    pass


class QuadratureFailure(OvershootLabError, ArithmeticError):
    pass


class NonStandardFamily(OvershootLabError, ValueError):
    """Raised when an operation requires a standardised base measure."""


class BudgetExceeded(OvershootLabError, RuntimeError):
    """No level crossing within ``SimBudget.max_steps``."""


class InsufficientSamples(OvershootLabError, ValueError):
    pass


class InsufficientSignal(OvershootLabError, ValueError):
    """Too few points above the noise floor to fit an exponential rate."""


class TruncationNotConverged(OvershootLabError, RuntimeError):
    pass


class EmptyLaw(OvershootLabError, ValueError):
    pass


class ConfigError(OvershootLabError, ValueError):
    """Invalid experiment configuration.

    ``line`` and ``field`` locate the offending entry when known.
    """

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
