"""Exception types shared across the package."""


class NotPositiveSemidefiniteError(ValueError):
    """A matrix required to be PSD has a significantly negative eigenvalue."""


class SolverError(RuntimeError):
    """The convex subproblem solver failed to converge.

    Carries the last iterate so callers can inspect or restart.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
