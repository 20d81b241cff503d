"""Exception types shared across the package."""


class NumericsError(RuntimeError):
    """Raised when a computation produces non-finite values (NaN/Inf)."""


class DataError(RuntimeError):
    """Raised for malformed files, headers, or on-disk containers."""


class DegenerateNormalError(ValueError):
    """Raised when a field gradient is too small to define a normal."""
