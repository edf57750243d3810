"""Exception types shared across the package."""

from __future__ import annotations


class InvalidControlError(ValueError):
    """A drift control violates its declared bound or shape constraints."""


class SimulationFailureError(RuntimeError):
    """Too many simulated paths left the admissible state region."""


class InvalidGeneratorError(ValueError):
    """A backward-equation driver fails its structural requirements."""


class GridTooCoarseError(RuntimeError):
    """Explicit finite-difference step count below the stability threshold.

    Carries the minimal admissible number of time steps so callers can retry.
    """

    def __init__(self, message: str, minimal_time_steps: int):
        super().__init__(message)
        self.minimal_time_steps = minimal_time_steps


class ScenarioError(ValueError):
    """A scenario file failed validation; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
