"""Exception taxonomy shared across modules (maps onto CLI exit codes)."""


class CqcError(Exception):
    """Base class for library errors."""


class DataError(CqcError, ValueError):
    """Malformed input data, files, or index bookkeeping."""


class ConfigError(CqcError, ValueError):
    """Invalid configuration, flags, or parameter combinations."""


class NumericError(CqcError, RuntimeError):
    """Numerical failure during fitting or evaluation."""


class ConvergenceError(NumericError):
    """Iterative fit failed to reach tolerance; carries the final gradient norm."""

    def __init__(self, message: str, grad_norm: float | None = None):
        super().__init__(message)
        self.grad_norm = grad_norm
