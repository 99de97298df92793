"""Exception types shared by every module."""


class DomainError(ValueError):
    """Input outside the physical or mathematical domain of an operation."""


class FitError(RuntimeError):
    """Optimizer failed to converge.

    Parameters
    ----------
    message : str
    last : object, optional
        Best or last iterate reached before giving up.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class EstimationError(RuntimeError):
    """Monte-Carlo estimate has no support on the requested grid."""
