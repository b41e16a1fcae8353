"""Exception types shared across the package."""


class ScdError(Exception):
    """Base class for errors raised by scdsplit."""


class InvalidInput(ScdError, ValueError):
    """An argument violates a documented precondition."""


class InvalidState(ScdError, RuntimeError):
    """An object is not in a state where the operation makes sense."""
