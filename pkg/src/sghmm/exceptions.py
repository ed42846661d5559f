class SGHMMError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SGHMMError, ValueError):
    pass


class NumericalError(SGHMMError, ArithmeticError):
    pass


class CapacityError(SGHMMError):
    """Raised when a minibatch cannot be placed in the sequence."""

    def __init__(self, message, max_count=None):
        super().__init__(message)
        self.max_count = max_count
