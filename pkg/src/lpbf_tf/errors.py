"""Exception hierarchy shared by all modules."""


class LpbfError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(LpbfError, ValueError):
    """Inputs violate a documented precondition or file schema."""


class NumericalError(LpbfError, ArithmeticError):
    """A computation could not be carried out (singular matrix, blow-up, ...)."""


class StabilityError(NumericalError):
    """Explicit time step exceeds the stability limit."""
