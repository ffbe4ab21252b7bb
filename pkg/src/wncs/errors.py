"""Exception types shared across the library.

The CLI maps these onto exit codes: ``ConfigError`` is a problem with user
input (exit 2), every other ``WncsError`` is an analysis failure (exit 3).
"""

from __future__ import annotations


class WncsError(Exception):
    """Base class for all library errors."""


class ConfigError(WncsError):
    """Invalid configuration value, file, or CLI argument."""


class NonSquareError(WncsError):
    """Matrix expected to be square is not."""


class NegativeEntryError(WncsError):
    """Matrix or vector contains a negative entry."""


class RowSumError(WncsError):
    """A row of a stochastic matrix does not sum to one."""

    def __init__(self, row: int, total: float):
        self.row = row
        self.total = total
        super().__init__(f"row {row} sums to {total!r}, expected 1")


class LeakyRestrictionError(WncsError):
    """Restriction to a state subset loses probability mass."""

    def __init__(self, row: int, total: float):
        self.row = row
        self.total = total
        super().__init__(
            f"restricted row {row} sums to {total!r}; the kept set is not closed"
        )


class NotIrreducibleError(WncsError):
    """Chain is not irreducible where irreducibility is required."""


class NoConvergenceError(WncsError):
    """Iterative method did not converge within its iteration cap."""

    def __init__(self, iterations: int, message: str = ""):
        self.iterations = iterations
        super().__init__(message or f"no convergence after {iterations} iterations")


class RangeViolationError(WncsError):
    """A buffer-length update produced a value outside its declared range."""


class EmptyPartitionError(WncsError):
    """Block partition requested with an empty index set."""


class DivergentCycleError(WncsError):
    """Excursions from the return set may never terminate."""


class ZeroStationaryMassError(WncsError):
    """A stationary probability is numerically zero where positivity is needed."""


class NoClosedLoopStatesError(WncsError):
    """The chain has no usable split into open-loop and closed-loop states."""


class SizeLimitError(WncsError):
    """Problem size exceeds the supported dense-computation limit."""


class InsufficientCyclesError(WncsError):
    """Trace contains too few cycles for the requested statistic."""
