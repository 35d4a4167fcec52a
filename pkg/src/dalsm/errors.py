"""Exception hierarchy shared by the fitting modules."""


class DalsmError(Exception):
    """Base class for all package errors."""


class InvalidConfigurationError(DalsmError):
    """Raised when a model or grid configuration is not usable."""


class OutOfSupportError(DalsmError):
    """Raised when an evaluation point falls outside the basis support."""


class NumericalFailureError(DalsmError):
    """Raised when a linear system is singular or a factorization fails."""


class ConvergenceError(DalsmError):
    """Raised when an iterative procedure exhausts its iteration budget.

    The ``trace`` attribute carries the iteration log accumulated before
    the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class UnidentifiableModelError(DalsmError):
    """Raised when the data cannot identify the model (e.g. all censored)."""
