"""Exception types shared across the package."""


class SpikeCapsError(Exception):
    """Base class for all package errors."""


class DimensionError(SpikeCapsError, ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class ParameterError(SpikeCapsError, ValueError):
    """A scalar argument is outside its admissible range."""


class StateError(SpikeCapsError, RuntimeError):
    """A recorded state does not match the call it is used with."""


class FormatError(SpikeCapsError, ValueError):
    """A file does not follow its declared binary format."""
