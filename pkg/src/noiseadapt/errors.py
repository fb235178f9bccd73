"""Exception types shared across the package."""


class NoiseAdaptError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NoiseAdaptError, ValueError):
    pass


class DegenerateInputError(InvalidArgumentError):
    """Raised when an input has no usable signal (e.g. zero power)."""


class InvalidRecipeError(InvalidArgumentError):
    pass


class FormatError(NoiseAdaptError, ValueError):
    """Malformed or unsupported file contents."""


class InvalidStateError(NoiseAdaptError, RuntimeError):
    pass
