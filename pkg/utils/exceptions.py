"""Exception hierarchy shared by every CUSP module.

Each error carries the process exit code the command line reports for it:
1 for usage/configuration problems, 2 for data problems, 3 for numeric ones.
"""


class CuspError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class UsageError(CuspError):
    """An operation was called with arguments that violate its contract."""


class ConfigurationError(CuspError):
    """An architecture, pattern or experiment configuration is invalid."""


class GenerationError(ConfigurationError):
    """A pattern generator could not satisfy its constraints."""


class DataError(CuspError):
    """Input data could not be read or is inconsistent."""

    exit_code = 2


class IdxFormatError(DataError):
    """An IDX file has a wrong magic number, bad dimensions or is truncated."""


class CountMismatchError(IdxFormatError):
    """Image and label files disagree on the number of samples."""


class PatternFileError(DataError):
    """A portable bitmap pattern file could not be parsed."""


class MalformedPatternFileError(PatternFileError):
    """The P1 header or pixel stream is malformed."""


class NonSquarePatternError(PatternFileError):
    """The bitmap width differs from its height."""


class NonBinaryPatternError(PatternFileError):
    """The bitmap contains a pixel value other than 0 or 1."""


class CheckpointError(DataError):
    """A checkpoint file could not be loaded."""


class NotACheckpointError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class UnsupportedVersionError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


class TruncatedCheckpointError(CheckpointError):
    """The checkpoint ends before its declared contents."""


class ChecksumError(CheckpointError):
    """The stored CRC32 does not match the checkpoint contents."""


class ProtocolError(DataError):
    """An experiment protocol cannot proceed (e.g. single-class records)."""


class NumericError(CuspError):
    """A non-finite value appeared where finite numbers are required."""

    exit_code = 3

    def __init__(self, message: str, epoch: int = None, batch: int = None):
        self.epoch = epoch
        self.batch = batch
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)
