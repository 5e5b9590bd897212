"""Exception types shared across the package.

The CLI maps these onto its exit codes: configuration/usage problems exit 1,
data problems exit 2 and numeric failures exit 3.
"""


class OFNetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OFNetError, ValueError):
    """Invalid shapes, channel counts or configuration values."""


class UsageError(OFNetError, ValueError):
    """An API was called in a way its contract does not allow."""


class NumericError(OFNetError, ArithmeticError):
    """NaN/Inf encountered, or a value outside its valid numeric range."""


class DataError(OFNetError, IOError):
    """Missing, malformed or inconsistent files on disk."""


class ManifestError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
