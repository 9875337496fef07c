"""Exception hierarchy shared across the package.

Two broad classes matter to callers: bad input data (exit code 3 at the
CLI) and numerical failures during fitting or root finding (exit code 4).
"""


class PredmarkError(Exception):
    """Base class for all package errors."""


class DataValidationError(PredmarkError):
    """Input data violates a documented requirement (missing value,
    treatment code outside {0,1}, empty arm, ...)."""


class NumericalError(PredmarkError):
    """A numerical routine failed (singular design, separation,
    nonconvergence, degenerate crossing, ...)."""


class SingularDesignError(NumericalError):
    pass


class SeparationError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class LeveragePointError(NumericalError):
    pass


class NoInteractionError(NumericalError):
    """Interaction coefficient is (numerically) zero, so ratio-based
    cut-offs are undefined."""


class DegenerateCrossingError(NumericalError):
    """Arm curves are parallel or identical where a crossing was requested."""
