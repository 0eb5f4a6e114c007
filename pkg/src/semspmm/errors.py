"""Exception hierarchy shared by every layer of the package.

The CLI maps these onto process exit codes, so library code raises the most
specific class it can.
"""


class SemSpmmError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class FormatError(SemSpmmError):
    """A sparse or dense image is malformed, truncated or inconsistent."""


class DataError(SemSpmmError):
    """Input data violates a precondition (ids out of range, duplicates...)."""


class ShapeError(SemSpmmError, ValueError):
    """Operand shapes do not conform."""


class BudgetError(SemSpmmError):
    """A memory plan is infeasible or tracked allocations exceeded it."""

    exit_code = 4


class StagnationError(SemSpmmError):
    """An iterative solver stopped making progress."""
