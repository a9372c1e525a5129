"""Shared exception types."""


class DimensionError(ValueError):
    """Tensor or array shapes do not compose."""


class ContractError(ValueError):
    """An operation was called outside its contract (bad argument, bad state)."""


class FileFormatError(ValueError):
    """Base class for serialization failures."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FileFormatError):
    """File format version is not supported."""


class TruncatedFileError(FileFormatError):
    """File ended before the payload it declared."""


class RoutingError(KeyError):
    """An observation could not be routed to an expert."""


class GenerationError(RuntimeError):
    """Dataset generation failed (demonstrator failure rate too high)."""
