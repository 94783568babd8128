"""Exception types shared across the package."""


class SgcError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(SgcError):
    """Cholesky factorization hit a non-positive pivot."""


class RankDeficientConstraint(SgcError):
    """Linear constraint matrix does not have full row rank."""


class InvalidSpec(SgcError):
    """Model specification is internally inconsistent."""


class DomainError(SgcError, ValueError):
    """Data outside the likelihood support (negative counts, y > trials, ...)."""


class NoConvergence(SgcError):
    """An iterative solver exhausted its iteration budget."""


class ModeSearchFailure(NoConvergence):
    """Hyperparameter mode search failed or the curvature there is not usable."""


class SkewnessOutOfRange(SgcError, ValueError):
    """Requested skewness outside what a skew-normal can attain."""


class BoundaryEvaluation(SgcError):
    """A cdf value underflowed to exactly 0 or 1 where its probit is needed."""


class DimensionMismatch(SgcError, ValueError):
    """Array shapes do not line up."""


class IndexOutOfRange(SgcError, IndexError):
    """Component index outside the latent field."""


class InsufficientSamples(SgcError):
    """Too few draws for the requested summary to be meaningful."""


class SupportMismatch(SgcError, ValueError):
    """Two tabulated densities do not share an abscissa grid."""
