"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class FormatError(ValueError):
    """A file could not be parsed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EvaluationError(ValueError):
    """A loss or metric was requested over an empty set of valid pixels."""


class NumericError(RuntimeError):
    """A non-finite value appeared where a finite one is required."""
