"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class OutOfRangeError(ValueError):
    """A point falls outside the grid or image it is supposed to address."""


class ConfigError(ValueError):
    """A configuration value is missing or invalid."""


class NumericalError(FloatingPointError):
    """A computation produced NaN or Inf."""
