"""Exception types shared across the package."""


class PrecondError(Exception):
    """Base class for all package errors."""


class InputError(PrecondError, ValueError):
    """Invalid argument or malformed input values."""


class StateError(PrecondError, RuntimeError):
    """Operation requested on an object in the wrong mode or state."""


class FormatError(PrecondError, ValueError):
    """Unreadable or corrupt file content."""


class ResourceError(PrecondError, RuntimeError):
    """Work refused because it exceeds a configured resource budget."""


class DivergedError(PrecondError, RuntimeError):
    """Solver objective blew past the divergence guard.

    Carries the partial trace accumulated before the blow-up so callers
    can still report what happened.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
