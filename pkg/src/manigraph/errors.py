"""Exception types shared across the package."""


class ManigraphError(Exception):
    """Base class for all package-specific errors."""


class InputError(ManigraphError, ValueError):
    """Malformed caller input (shape mismatch, unknown label, bad file record)."""


class ConfigError(ManigraphError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericError(ManigraphError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class SliceRangeError(ManigraphError):
    """Requested slice window falls outside the demonstration; callers skip the sample."""
