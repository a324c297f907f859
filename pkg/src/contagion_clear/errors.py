"""Exception hierarchy shared by all solver modules."""
from __future__ import annotations


class ContagionError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ContagionError, ValueError):
    """Malformed or out-of-range input data."""


class StructuralError(ContagionError):
    """The contract structure itself is unusable (cycles, unbounded payoffs)."""

    def __init__(self, message: str, cycle: tuple[int, ...] | None = None):
        super().__init__(message)
        self.cycle = cycle


class NumericalFailure(ContagionError):
    """An iterative or linear solve did not produce a certified answer."""

    def __init__(self, message: str, best_residual: float | None = None, **context):
        super().__init__(message)
        self.best_residual = best_residual
        self.context = context


class ScenarioError(ContagionError):
    """Scenario file could not be parsed or is semantically invalid."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line
