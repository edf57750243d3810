"""Absolutely continuous measure changes driven by bounded drift controls.

Each control is a deterministic process theta with |theta| <= k.  Its density
against the reference measure on a discrete grid is

    w = exp( sum_i theta_i dB_i - 0.5 * sum_i theta_i^2 dt ),

a positive unit-mean weight per path.  Reweighting one common set of paths by
every control in a family gives all the family's expectations with shared
randomness, which is what makes the order relations between estimators hold
at sample level and not just in the limit.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidControlError
from .paths import PathBundle, TimeGrid

__all__ = [
    "ThetaControl",
    "DensityWeights",
    "MartingaleDeviationWarning",
    "girsanov_weights",
    "expectation_under",
    "weight_matrix",
    "expectation_profile",
    "default_control_family",
]


class MartingaleDeviationWarning(UserWarning):
    """Sample mean of a density strayed more than 4 standard errors from 1."""


@dataclass(frozen=True)
class ThetaControl:
    """Deterministic drift-distortion process, constant or piecewise-constant.

    kind "constant": theta(t) = theta0.
    kind "bang_bang": theta(t) = signs[j] * level on the j-th segment cut by
    switch_times (fractions of the horizon in (0, 1), strictly increasing).
    In both cases |theta| <= bound is enforced at construction.
    """

    bound: float
    kind: str
    theta0: float = 0.0
    switch_times: tuple[float, ...] = ()
    signs: tuple[int, ...] = ()
    level: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.bound) or self.bound < 0.0:
            raise InvalidControlError(f"bound must be >= 0, got {self.bound}")
        if self.kind == "constant":
            if abs(self.theta0) > self.bound + 1e-15:
                raise InvalidControlError(
                    f"constant level {self.theta0} exceeds bound {self.bound}"
                )
        elif self.kind == "bang_bang":
            if abs(self.level) > self.bound + 1e-15:
                raise InvalidControlError(
                    f"bang-bang level {self.level} exceeds bound {self.bound}"
                )
            if len(self.signs) != len(self.switch_times) + 1:
                raise InvalidControlError(
                    f"need {len(self.switch_times) + 1} signs for "
                    f"{len(self.switch_times)} switch times, got {len(self.signs)}"
                )
            if any(s not in (-1, 1) for s in self.signs):
                raise InvalidControlError(f"signs must be +1 or -1, got {self.signs}")
            ts = self.switch_times
            if any(not (0.0 < t < 1.0) for t in ts):
                raise InvalidControlError(f"switch times must lie in (0, 1), got {ts}")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise InvalidControlError(f"switch times must be strictly increasing, got {ts}")
        else:
            raise InvalidControlError(f"unknown control kind {self.kind!r}")

    @classmethod
    def constant(cls, theta0: float, bound: float) -> "ThetaControl":
        return cls(bound=float(bound), kind="constant", theta0=float(theta0))

    @classmethod
    def bang_bang(
        cls,
        switch_times: tuple[float, ...],
        signs: tuple[int, ...],
        level: float,
        bound: float,
    ) -> "ThetaControl":
        return cls(
            bound=float(bound),
            kind="bang_bang",
            switch_times=tuple(float(t) for t in switch_times),
            signs=tuple(int(s) for s in signs),
            level=float(level),
        )

    def negated(self) -> "ThetaControl":
        if self.kind == "constant":
            return ThetaControl.constant(-self.theta0, self.bound)
        return ThetaControl.bang_bang(
            self.switch_times, tuple(-s for s in self.signs), self.level, self.bound
        )

    def theta_on_grid(self, grid: TimeGrid) -> np.ndarray:
        """theta evaluated at the left endpoint of each grid interval."""
        if self.kind == "constant":
            return np.full(grid.steps, self.theta0)
        left = grid.times()[:-1] / grid.horizon
        cuts = np.asarray(self.switch_times)
        segment = np.searchsorted(cuts, left, side="right")
        return np.asarray(self.signs)[segment] * self.level

    def label(self) -> str:
        if self.kind == "constant":
            return f"theta={self.theta0:+.6g}"
        pattern = "".join("+" if s > 0 else "-" for s in self.signs)
        return f"bang_bang[{pattern}] level={self.level:+.6g}"


@dataclass(frozen=True)
class DensityWeights:
    """Per-path Radon-Nikodym weights for one control on one bundle."""

    control: ThetaControl
    weights: np.ndarray
    mean: float = field(init=False)
    std_error: float = field(init=False)

    def __post_init__(self) -> None:
        w = self.weights
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ValueError("density weights must be finite and strictly positive")
        object.__setattr__(self, "mean", float(w.mean()))
        se = float(w.std(ddof=1) / np.sqrt(w.size)) if w.size > 1 else 0.0
        object.__setattr__(self, "std_error", se)


def girsanov_weights(control: ThetaControl, bundle: PathBundle) -> DensityWeights:
    """Density of the control's measure against the reference, path by path.

    Warns (without failing) when the sample mean is more than 4 standard
    errors away from its theoretical value 1.
    """
    grid = bundle.grid
    dt = grid.dt
    if control.kind == "constant":
        theta0 = control.theta0
        log_w = theta0 * bundle.terminal_brownian() - 0.5 * theta0 * theta0 * grid.horizon
    else:
        theta = control.theta_on_grid(grid)
        log_w = bundle.brownian_increments @ theta - 0.5 * float(theta @ theta) * dt
    dw = DensityWeights(control=control, weights=np.exp(log_w))
    if dw.std_error > 0.0 and abs(dw.mean - 1.0) > 4.0 * dw.std_error:
        warnings.warn(
            f"density mean {dw.mean:.6f} deviates from 1 by more than 4 SE "
            f"({dw.std_error:.2e}) for control {control.label()}",
            MartingaleDeviationWarning,
            stacklevel=2,
        )
    return dw


def expectation_under(
    control: ThetaControl,
    payoff_values: np.ndarray,
    weights: DensityWeights,
) -> tuple[float, float]:
    """Reweighted Monte Carlo mean and its standard error under one control."""
    if weights.control != control:
        raise ValueError("weights were computed for a different control")
    x = np.asarray(payoff_values, dtype=float)
    if x.shape != weights.weights.shape:
        raise ValueError(
            f"payoff array shape {x.shape} does not match weights shape {weights.weights.shape}"
        )
    products = weights.weights * x
    estimate = float(products.mean())
    se = float(products.std(ddof=1) / np.sqrt(products.size)) if products.size > 1 else 0.0
    return estimate, se


def weight_matrix(
    family: tuple[ThetaControl, ...] | list[ThetaControl],
    bundle: PathBundle,
    threads: int = 1,
) -> np.ndarray:
    """Stack of density weights, one column per control, shape (n_paths, C).

    With threads > 1 the columns are computed concurrently but assembled by
    index, so the result does not depend on the thread count.
    """
    family = tuple(family)
    if not family:
        raise ValueError("control family must be nonempty")
    out = np.empty((bundle.n_paths, len(family)))
    if threads <= 1 or len(family) == 1:
        for j, control in enumerate(family):
            out[:, j] = girsanov_weights(control, bundle).weights
        return out
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        futures = {pool.submit(girsanov_weights, c, bundle): j for j, c in enumerate(family)}
        for fut, j in futures.items():
            out[:, j] = fut.result().weights
    return out


def expectation_profile(
    payoff_values: np.ndarray,
    family: tuple[ThetaControl, ...] | list[ThetaControl],
    bundle: PathBundle,
    weights: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Estimates and standard errors of E[payoff] under every family member."""
    family = tuple(family)
    if weights is None:
        weights = weight_matrix(family, bundle, threads=threads)
    if weights.shape != (bundle.n_paths, len(family)):
        raise ValueError(
            f"weight matrix shape {weights.shape} does not match "
            f"({bundle.n_paths}, {len(family)})"
        )
    x = np.asarray(payoff_values, dtype=float)
    if x.shape != (bundle.n_paths,):
        raise ValueError(f"payoff array shape {x.shape} does not match paths {bundle.n_paths}")
    products = weights * x[:, None]
    estimates = products.mean(axis=0)
    ses = products.std(axis=0, ddof=1) / np.sqrt(bundle.n_paths)
    return estimates, ses


def default_control_family(
    k: float,
    grid_count: int = 21,
    bang_bang_count: int = 8,
) -> tuple[ThetaControl, ...]:
    """Constants on a uniform grid over [-k, k] plus paired bang-bang controls.

    The family is closed under negation and contains theta = 0.  With k = 0
    every member collapses to the zero control, so a single one is returned.
    """
    if k < 0.0:
        raise InvalidControlError(f"k must be >= 0, got {k}")
    if grid_count < 2:
        raise ValueError(f"grid_count must be >= 2, got {grid_count}")
    if k == 0.0:
        return (ThetaControl.constant(0.0, 0.0),)
    # Build the positive half and mirror it so negation closure is bitwise.
    half = grid_count // 2
    positive = np.linspace(0.0, k, half + 1)[1:]
    middle = [0.0] if grid_count % 2 == 1 else []
    levels = np.concatenate([-positive[::-1], middle, positive])
    constants = [ThetaControl.constant(t, k) for t in levels]
    patterns: list[tuple[tuple[float, ...], tuple[int, ...]]] = [
        ((0.5,), (1, -1)),
        ((1.0 / 3.0, 2.0 / 3.0), (1, -1, 1)),
        ((0.25, 0.75), (1, -1, 1)),
        ((0.2, 0.4, 0.6, 0.8), (1, -1, 1, -1, 1)),
    ]
    bang: list[ThetaControl] = []
    for times, signs in patterns:
        c = ThetaControl.bang_bang(times, signs, k, k)
        bang.extend([c, c.negated()])
    return tuple(constants) + tuple(bang[: max(0, int(bang_bang_count))])
