"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, data and format
errors -> 3, numerical failures -> 4.
"""


class XoodError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(XoodError):
    """Operand shapes are incompatible; the message names the offending axes."""


class ContractError(XoodError):
    """An operation was called with arguments that violate its preconditions."""


class FormatError(XoodError):
    """A file does not conform to its declared binary or text format."""

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(XoodError):
    """Invalid, missing, or contradictory run configuration."""


class NumericalError(XoodError):
    """A numerical procedure failed to produce a usable result."""


class SingularityError(NumericalError):
    """A positive-definite factorization failed.

    Carries the failing (smallest) pivot so callers can report how close
    to singular the matrix was.
    """

    def __init__(self, message: str, *, pivot: float | None = None):
        super().__init__(message)
        self.pivot = pivot


class TrainingDivergedError(NumericalError):
    """The training loss became non-finite. Carries the epoch."""

    def __init__(self, message: str, *, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
