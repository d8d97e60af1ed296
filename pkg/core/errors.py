# core/errors.py
# Exception hierarchy shared by every solver module

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple


class GraphOTError(Exception):
    """Base class for all errors raised by graphot."""


class LabelError(GraphOTError):
    """Unknown, duplicated or overlapping axis labels."""


class ShapeError(GraphOTError):
    """Axis size mismatch on a shared label."""


class NumericError(GraphOTError):
    """Division by zero, underflow or a non-positive entry where positivity is required."""

    def __init__(self, message: str, index: Optional[Tuple[int, ...]] = None):
        if index is not None:
            message = f"{message} (at index {tuple(int(i) for i in index)})"
        super().__init__(message)
        self.index = index


class ContractError(GraphOTError):
    """A documented precondition of an operation does not hold."""


class AssumptionViolation(GraphOTError):
    """Separator neighbours do not form a nested inclusion sequence."""

    def __init__(self, message: str, first=None, second=None):
        super().__init__(message)
        self.first = first
        self.second = second


class DenseCapError(GraphOTError):
    """A full tensor or LP would exceed the configured size cap."""


class SpecError(GraphOTError):
    """Problem-spec file does not match the schema."""


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    where: Tuple = ()

    def __str__(self) -> str:
        return f"[{self.rule}] {self.message}"


class ValidationError(GraphOTError):
    """Raised by constructors whose validator reported violations."""

    def __init__(self, violations: Iterable[Violation]):
        self.violations: List[Violation] = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "invalid structure")


class ConvergenceWarning(UserWarning):
    """Solver stopped at max_iter before reaching its tolerance."""


def raise_if(violations: List[Violation]) -> None:
    if violations:
        raise ValidationError(violations)
