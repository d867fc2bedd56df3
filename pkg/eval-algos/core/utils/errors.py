"""
Error types shared by the Risk Advisor pipeline.

The CLI maps each family to an exit code:
    ConfigError  -> 2
    DataError    -> 3
    NumericError -> 4
"""
from typing import Optional


class RiskAdvisorError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(RiskAdvisorError, ValueError):
    """An invalid configuration value. `field` names the offending setting."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class DataError(RiskAdvisorError, ValueError):
    """
    Problems with input data. `row` is 1-based over data rows (header excluded)
    and `column` is the column name, when known.
    """

    exit_code = 3

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DatasetNotFoundError(DataError, FileNotFoundError):
    pass


class MissingColumnError(DataError):
    pass


class CellParseError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class MissingProbabilitiesError(DataError):
    """Raised when a confidence baseline is requested from a label-only model."""


class NumericError(RiskAdvisorError, ArithmeticError):
    """Training diverged (non-finite loss)."""

    exit_code = 4
