"""Exception hierarchy shared across the package.

The CLI maps each family onto a process exit code, so new errors should
subclass one of :class:`DataError`, :class:`NumericalFailure` or
:class:`ValidationFailure`.
"""


class DGSSError(Exception):
    """Base class for all package errors."""


class DataError(DGSSError):
    """Malformed or inconsistent input data."""


class DimensionMismatch(DataError):
    pass


class InvalidInput(DataError):
    pass


class DegenerateGraph(DataError):
    """Random graph generation produced no edges after all retries."""


class InvalidParam(DGSSError, ValueError):
    """Distribution parameter outside its domain."""


class NumericalFailure(DGSSError):
    """A numerical routine failed; ``sweep`` is set when raised from a chain."""

    def __init__(self, message, sweep=None):
        if sweep is not None:
            message = f"{message} (sweep {sweep})"
        super().__init__(message)
        self.sweep = sweep


class NotPositiveDefinite(NumericalFailure):
    pass


class PrecisionNotPD(NumericalFailure):
    pass


class QuadratureFailure(NumericalFailure):
    pass


class EmptyChain(DGSSError):
    pass


class ValidationFailure(DGSSError):
    pass
