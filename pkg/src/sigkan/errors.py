"""Exception types shared across the package (mapped to CLI exit codes)."""


class ConfigError(ValueError):
    """Invalid user configuration; raised before any compute starts."""


class DataError(ValueError):
    """Malformed or insufficient input data."""


class NumericalError(ArithmeticError):
    """Non-finite values appeared during a forward or backward pass."""
