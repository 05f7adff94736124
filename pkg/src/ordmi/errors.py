"""Exception hierarchy shared by every module."""


class OrdmiError(Exception):
    """Base class for all package errors."""


class ConfigError(OrdmiError, ValueError):
    """Invalid run configuration or command-line options."""


class SchemaError(OrdmiError, ValueError):
    """Column names or variable metadata do not match the data."""


class DataError(OrdmiError, ValueError):
    """Malformed or inconsistent data values."""


class FormulaError(OrdmiError, ValueError):
    """Syntax or semantic error in a model formula."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class NumericalError(OrdmiError, RuntimeError):
    """A numerical routine failed (non-convergence, singular system...)."""


class InsufficientDrawsError(OrdmiError, ValueError):
    """Not enough retained MCMC draws to honour the extraction request."""
