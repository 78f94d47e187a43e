"""Exception hierarchy shared by every fallfuse module."""


class FallFuseError(Exception):
    """Base class for all fallfuse errors."""


class ShapeError(FallFuseError, ValueError):
    """Tensor extents are incompatible with the requested operation."""


class StateError(FallFuseError, RuntimeError):
    """A layer or model was used in a state that does not allow the call."""


class InputError(FallFuseError, ValueError):
    """Caller-supplied values are outside an operation's domain."""


class ConfigError(FallFuseError, ValueError):
    """A configuration value is invalid or missing."""


class SchemaError(FallFuseError, ValueError):
    """A CSV header does not contain a configured column."""


class CorpusError(FallFuseError, RuntimeError):
    """Ingestion produced nothing usable."""


class DecodeError(FallFuseError, ValueError):
    """An image buffer or binary file could not be decoded."""


class DivergenceError(FallFuseError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ModalityError(InputError):
    """A model requires a modality the data does not provide."""
