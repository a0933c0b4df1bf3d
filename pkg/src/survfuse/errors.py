"""Exception hierarchy shared by every subpackage."""

from __future__ import annotations


class SurvfuseError(Exception):
    """Base class for all errors raised by survfuse."""


class DimensionError(SurvfuseError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SurvfuseError, ValueError):
    """A caller violated a documented precondition."""


class DomainError(SurvfuseError, ValueError):
    """A value lies outside the domain of a distribution or function."""


class DataError(SurvfuseError, ValueError):
    """Input data is malformed, inconsistent or incomplete."""


class NumericalError(SurvfuseError, ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
