"""Dense feature matching with a learned softmax temperature, on a small numpy autograd."""

from .errors import ConfigError, DimensionError, DomainError, NumericalError, OutOfRangeError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DimensionError", "DomainError", "NumericalError", "OutOfRangeError"]
