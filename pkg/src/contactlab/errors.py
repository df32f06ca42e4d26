"""Exception types shared across the package."""


class ContactLabError(Exception):
    """Base class for all package errors."""


class DomainError(ContactLabError, ValueError):
    """Invalid parameter or graph input (negative rate, unknown family, ...)."""


class ResourceError(ContactLabError, RuntimeError):
    """A configured cap would be exceeded (ball size, state space, series length)."""


class QualityError(ContactLabError, RuntimeError):
    """An estimate is statistically unusable (flagged-replica fraction too high)."""


class NumericalError(ContactLabError, RuntimeError):
    """A numerical routine failed to meet its tolerance."""


class FitError(ContactLabError, RuntimeError):
    """A fit or scan could not produce a usable result on the given data."""
