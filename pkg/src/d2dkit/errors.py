"""Exception hierarchy shared by all d2dkit modules.

Each failure class maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class D2DKitError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(D2DKitError):
    """A file does not conform to its declared on-disk format."""


class ValidationError(D2DKitError):
    """Inputs are well-formed but mutually inconsistent or out of contract."""


class DataError(D2DKitError):
    """Array payload contains invalid values (NaN/Inf)."""


class NotFoundError(D2DKitError):
    """A required file or directory entry is missing."""


class PreconditionError(D2DKitError):
    """An operation was called on inputs it explicitly refuses."""


class DegenerateInputError(D2DKitError):
    """Numerically degenerate input (zero mean score, vanishing projection)."""
