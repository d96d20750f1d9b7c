"""Exception hierarchy shared by all numerical layers."""


class NumericalError(ArithmeticError):
    """Base class for failures of a numerical procedure."""


class ConvergenceError(NumericalError):
    """An iterative method (series, quadrature, Newton) failed to converge."""


class InvariantViolation(NumericalError):
    """A state left the admissible set (n <= 0, |u| >= 1, norm drift, ...)."""


class StabilityError(NumericalError):
    """A requested time step exceeds the explicit stability bound."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""
