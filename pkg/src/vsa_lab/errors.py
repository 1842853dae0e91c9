"""Exception types shared across the package."""


class VSAError(Exception):
    """Base class for all package errors."""


class DimensionError(VSAError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(VSAError, ValueError):
    """A configuration value is invalid or inconsistent."""


class NumericInputError(VSAError, ValueError):
    """An input contains NaN (or otherwise unusable) values."""


class ContractError(VSAError, RuntimeError):
    """A call violated a documented precondition."""


class FormatError(VSAError, ValueError):
    """A file on disk does not match the expected layout."""


class LoadError(FormatError):
    """A checkpoint could not be restored."""


class TrainingError(VSAError, RuntimeError):
    """Training hit a non-finite loss or gradient."""
