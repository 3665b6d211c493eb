"""Exception types shared by all modules."""


class KsatError(Exception):
    """Base class for library errors."""


class InvalidInput(KsatError, ValueError):
    """Arguments violate an operation's precondition."""


class ResourceLimit(KsatError, RuntimeError):
    """A configured size cap (enumeration, tree nodes) would be exceeded."""


class SolverFailure(KsatError, RuntimeError):
    """An iterative solver did not converge; ``trace`` holds its iterates."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
