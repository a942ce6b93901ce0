"""Exception hierarchy shared by all modules."""


class RomError(Exception):
    """Base class for every error raised by :mod:`tdrom`."""


class ShapeError(RomError, ValueError):
    """Array dimensions do not conform."""


class ValidationError(RomError, ValueError):
    """An input violates a documented precondition."""


class ConfigurationError(RomError):
    """A required component is missing or the configuration is inconsistent."""


class SolverError(RomError):
    """A linear step system is singular or too ill-conditioned.

    Carries the offending time index ``k`` and parameter ``xi``.
    """

    def __init__(self, message, k=None, xi=None):
        super().__init__(message)
        self.k = k
        self.xi = xi


class DivergenceError(SolverError):
    """A non-finite value appeared during time stepping."""


class RankDeficiencyError(RomError):
    """Gram-Schmidt met a (numerically) linearly dependent snapshot."""

    def __init__(self, message, k=None, index=None):
        super().__init__(message)
        self.k = k
        self.index = index


class StabilityError(RomError):
    """The implicit update of the error estimator is not defined."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


class StagnationError(RomError):
    """A greedy loop stopped making progress."""


class ConsistencyError(RomError):
    """An online quantity contradicts its offline construction."""
