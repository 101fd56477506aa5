"""Exception types shared across the package."""


class SpecError(ValueError):
    """A network or experiment specification is internally inconsistent."""


class DimensionError(ValueError):
    """An array's shape disagrees with what the network spec requires."""


class InputError(ValueError):
    """Caller-supplied data violates an operation's precondition."""


class IdxFormatError(ValueError):
    """An IDX file is malformed; the message names the offense."""


class NumericError(RuntimeError):
    """A computation produced non-finite values.

    ``where`` identifies the offending layer or stage when known.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class TrainingError(RuntimeError):
    """Training diverged; carries the epoch and batch index."""

    def __init__(self, message, epoch, batch):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class SearchSpaceExhausted(Exception):
    """Every point of the search grid has already been explored."""


class ConfigError(ValueError):
    """A run configuration failed to parse or validate."""
