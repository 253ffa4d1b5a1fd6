"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or arguments (bad sizes, ranges, enum values)."""


class NumericError(ArithmeticError):
    """A numeric precondition failed (non-PD matrix, singular solve)."""


class CsvParseError(ValueError):
    """Malformed CSV input; message carries row/column location."""


class WidthUnsupportedError(RuntimeError):
    """Width requested for a family that cannot measure it (e.g. dim > 2)."""
