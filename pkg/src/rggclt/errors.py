"""Exception hierarchy shared by all modules."""


class RGGError(Exception):
    """Base class for errors raised by this package."""


class ArgumentError(RGGError, ValueError):
    """An argument lies outside the documented domain."""


class DegenerateInputError(RGGError, ValueError):
    """A point configuration is not generic (duplicate positions, marks or distances)."""


class NumericError(RGGError, ArithmeticError):
    """A computation produced a non-finite or undefined value."""


class IntegrationError(NumericError):
    """Adaptive quadrature did not reach the requested tolerance.

    The best available estimate is kept on ``partial`` so callers can still
    inspect it.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class CapacityError(RGGError):
    """A configured resource cap (e.g. maximum points per replicate) was exceeded."""
