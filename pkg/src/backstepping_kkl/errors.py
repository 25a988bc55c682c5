"""Exception types raised by the solvers."""


class BkklError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteState(BkklError):
    """A state component became NaN or infinite (integration blow-up)."""


class SolverFailure(BkklError):
    """A linear solve met a zero pivot."""


class GridMismatch(BkklError, ValueError):
    """Two fields or tables live on different spatial grids."""


class DomainTooLarge(BkklError, ValueError):
    """Series argument outside the supported radius."""


class OutOfTriangle(BkklError, ValueError):
    """Kernel evaluated outside 0 <= lambda_tilde <= lambda <= 1."""


class NonPositiveGamma(BkklError, ValueError):
    pass


class NonPositiveTau(BkklError, ValueError):
    pass


class SingularBVP(BkklError):
    """The assembled boundary value problem is singular."""


class EmptySearchBox(BkklError, ValueError):
    pass


class RankDeficientLS(BkklError):
    """Unregularized least squares with collinear modes."""


class ConfigError(BkklError, ValueError):
    """Invalid experiment configuration."""
