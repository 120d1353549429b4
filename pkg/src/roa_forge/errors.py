"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke an operation's precondition (shape, range, membership)."""


class ConfigurationError(ValueError):
    """A system or pipeline was configured inconsistently."""


class NumericOverflowError(ArithmeticError):
    """A dynamics evaluation produced a non-finite value."""


class EstimationFailure(RuntimeError):
    """Sampling-based estimation of certification constants failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class TrainingAborted(RuntimeError):
    """The training loss became NaN or infinite."""


class ConstructionFailure(RuntimeError):
    """The ellipsoidal initial region could not be built."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = dict(report or {})
