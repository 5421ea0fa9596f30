"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Raised when tensor/array shapes are incompatible for an operation."""


class UsageError(Exception):
    """Bad command line, bad config file, unknown key. CLI exit code 1."""


class DataError(Exception):
    """Missing or malformed input data. CLI exit code 2."""


class NumericalError(Exception):
    """Non-finite loss or gradient; training state was rolled back. CLI exit code 3."""


class CheckpointError(DataError):
    """Base class for checkpoint file problems."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint file ended before the declared payload."""


class ChecksumMismatchError(CheckpointError):
    """Stored CRC32 does not match the file contents."""


class VersionMismatchError(CheckpointError):
    """Checkpoint format version is not supported."""
