"""Exception hierarchy shared across the package."""


class CaeError(Exception):
    """Base class for all package errors."""


class ShapeError(CaeError, ValueError):
    """Array shapes or dimensions are inconsistent."""


class ParameterError(CaeError, ValueError):
    """A hyperparameter or argument is outside its valid range."""


class ContractError(CaeError, ValueError):
    """Input data violates a documented precondition (sign, finiteness, ...)."""


class FormatError(CaeError, ValueError):
    """A file on disk does not follow the expected layout."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class MagicError(FormatError):
    """Checkpoint does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Checkpoint was written by an unsupported format version."""


class TruncatedError(FormatError):
    """Checkpoint or data blob is shorter than its manifest declares."""


class NumericalError(CaeError, ArithmeticError):
    """Training diverged (NaN or infinite loss)."""

    def __init__(self, message, epoch=None, band=None):
        super().__init__(message)
        self.epoch = epoch
        self.band = band
