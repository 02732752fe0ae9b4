"""Exception hierarchy shared by every module."""


class JmanError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(JmanError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(JmanError, ValueError):
    """A hyperparameter or configuration value is out of range."""


class DataError(JmanError, ValueError):
    """Input data violates a schema or index bound."""


class UsageError(JmanError, ValueError):
    """An API was called in a way its contract forbids."""


class NumericError(JmanError, ArithmeticError):
    """A computation produced NaN or Inf."""
