"""Exception types shared across the package."""

from __future__ import annotations


class FastcapError(Exception):
    """Base class for all package-specific errors."""


class DomainError(FastcapError, ValueError):
    """An argument or field is outside its mathematical domain."""


class FitError(FastcapError, ValueError):
    """Power-curve fitting received unusable samples."""


class CounterError(FastcapError, ValueError):
    """Performance counters cannot support the requested derivation."""


class InfeasibleError(FastcapError):
    """No operating point satisfies the power budget.

    Carries the floor power (watts) that would have to fit under the
    budget for a solution to exist.
    """

    def __init__(self, floor_w: float, budget_w: float, detail: str = ""):
        self.floor_w = float(floor_w)
        self.budget_w = float(budget_w)
        msg = f"infeasible: floor={self.floor_w:.6g}W budget={self.budget_w:.6g}W"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class EnumerationTooLargeError(FastcapError):
    """Exhaustive policy enumeration would exceed the configured cap."""

    def __init__(self, combos: int, cap: int):
        self.combos = int(combos)
        self.cap = int(cap)
        super().__init__(
            f"enumeration of {self.combos} combinations exceeds cap {self.cap}"
        )


class SolverError(FastcapError):
    """Internal consistency check of the optimizer failed."""


class ConfigError(FastcapError, ValueError):
    """A run configuration file failed validation."""
