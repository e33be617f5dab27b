"""Exception and warning types shared across the package."""


class FlobError(Exception):
    """Base class for all package errors."""


class DomainError(FlobError, ValueError):
    """Parameter or argument outside the mathematically valid domain."""


class NonConvergence(FlobError):
    """An iterative evaluation failed to reach the requested tolerance."""


class NoConvergence(NonConvergence):
    """Fixed-point solver exceeded its iteration budget (residual reported)."""


class QuadratureFailure(FlobError):
    """A numerical integral did not meet its error tolerance."""


class OutOfRange(FlobError, ValueError):
    """Lookup outside a table's tabulated range with no tail rule configured."""


class GridOverflow(FlobError):
    """Too much mass reached the boundary of a finite spatial grid."""


class StabilityError(FlobError):
    """Explicit time step exceeds its stability bound."""


class NoRoot(FlobError):
    """Bracketing root search found no sign change on the search interval."""


class InvariantBreach(FlobError):
    """Internal consistency check failed (bug trap, not a user error)."""


class ExecutionStall(FlobError):
    """Meta-order execution exhausted the opposite side of the book."""


class ConfigError(FlobError, ValueError):
    """Invalid or missing configuration field; message names the field path."""


class IllConditioned(FlobError):
    """Normal equations too ill-conditioned for a trustworthy solve."""


class TooShort(FlobError, ValueError):
    """Input series shorter than the estimator requires."""


class RegimeWarning(UserWarning):
    """Formula evaluated outside its asymptotic regime of validity."""
