"""Exceptions raised by the refpriv benchmark."""

from __future__ import annotations


class RefPrivError(Exception):
    """Base class for every refpriv error."""


class ConfigError(RefPrivError):
    """A defense, DP parameter set or experiment config is invalid."""


class ShapeError(RefPrivError, ValueError):
    """Array dimensions do not agree."""


class NumericError(RefPrivError, ArithmeticError):
    """A non-finite value appeared in gradients, parameters or losses."""

    def __init__(self, message: str, layer_index: int | None = None) -> None:
        super().__init__(message)
        self.layer_index = layer_index


class ParseError(RefPrivError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None) -> None:
        super().__init__(
            message if line_number is None else f"line {line_number}: {message}"
        )
        self.line_number = line_number


class DataValidationError(RefPrivError):
    """Input data violates a domain constraint."""


class SizeError(RefPrivError):
    """Requested split sizes exceed the dataset."""


class DomainError(RefPrivError):
    """A closed-form expression is outside its domain."""


class UndefinedCorrelationError(RefPrivError):
    """A correlation was requested over a sequence with zero variance."""
