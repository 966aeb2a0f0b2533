"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2,
DataValidationError (and subclasses) -> 3, NumericError -> 4.
"""

from __future__ import annotations


class PauseLMError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PauseLMError):
    """Invalid or inconsistent configuration."""


class DataValidationError(PauseLMError):
    """Input data violates a documented invariant."""


class ParseError(DataValidationError):
    """A dataset line could not be parsed at all."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class NumericError(PauseLMError):
    """A numeric computation produced non-finite values."""
