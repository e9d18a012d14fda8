"""Exception hierarchy shared by all fsqnet modules."""


class FsqError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FsqError):
    """Tensor shapes are invalid or incompatible for an operation."""


class ConfigError(FsqError):
    """A configuration value is out of its legal range."""


class DataError(FsqError):
    """Dataset content or labels are invalid."""


class DecodeError(DataError):
    """An image file could not be decoded."""


class ModelError(FsqError):
    """Model parameters are missing or have the wrong shape."""


class StateError(FsqError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericError(FsqError):
    """Non-finite values where finite ones are required."""


class CheckpointError(FsqError):
    """Base class for checkpoint read/write problems."""


class FormatError(CheckpointError):
    """Bad magic bytes or an unsupported format version."""


class CorruptionError(CheckpointError):
    """Checkpoint bytes fail the integrity check."""


class CompatibilityError(CheckpointError):
    """Checkpoint contents do not match the expected model configuration."""
