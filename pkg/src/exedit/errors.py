"""Exception types shared across the package."""


class ExeditError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(ExeditError, ValueError):
    """An argument violates its documented range or structure."""


class ShapeError(ExeditError, ValueError):
    """Array arguments have inconsistent shapes."""


class NumericError(ExeditError, ArithmeticError):
    """A computation produced non-finite values."""


class DatasetError(ExeditError):
    """A dataset directory or annotation file is missing or malformed."""


class CheckpointError(ExeditError):
    """A checkpoint file is unreadable or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version differs from the supported version."""
