"""Capacities induced by a measure family and Choquet integration against them.

The upper capacity of an event is the largest reweighted probability over the
family, the lower capacity the smallest.  Integration uses the survival-curve
form: integral of c(X > x) over positive levels plus integral of c(X > x) - 1
over negative levels.  Payoffs taking few distinct values are integrated
exactly as simple functions; everything else goes through a level quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .measures import ThetaControl, weight_matrix
from .paths import PathBundle

# Payoffs with at most this many distinct values use the exact telescoping sum.
SIMPLE_FUNCTION_LIMIT = 64

DEFAULT_LEVEL_COUNT = 513


# ---------------------------------------------------------------------------
# payoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Payoff:
    """Claim on the terminal state with a declared monotonicity.

    The declaration drives which results apply: extremal-measure pricing and
    the z-sign check require "increasing" or "decreasing"; "none" restricts
    the caller to family-search estimators.
    """

    name: str
    kind: str  # "call" | "put" | "digital" | "custom"
    monotonicity: str  # "increasing" | "decreasing" | "none"
    fn: Callable[[np.ndarray], np.ndarray]
    strike: Optional[float] = None

    def __post_init__(self) -> None:
        if self.monotonicity not in ("increasing", "decreasing", "none"):
            raise ValueError(f"unknown monotonicity {self.monotonicity!r}")
        if self.kind not in ("call", "put", "digital", "custom"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")

    def map(self, terminal: np.ndarray) -> np.ndarray:
        values = np.asarray(self.fn(np.asarray(terminal, dtype=float)), dtype=float)
        if values.shape != np.shape(terminal):
            raise ValueError(f"payoff {self.name!r} changed the sample shape")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"payoff {self.name!r} produced non-finite values")
        return values

    @classmethod
    def call(cls, strike: float) -> "Payoff":
        return cls(
            name=f"call_{strike:g}",
            kind="call",
            monotonicity="increasing",
            fn=lambda s: np.maximum(s - strike, 0.0),
            strike=float(strike),
        )

    @classmethod
    def put(cls, strike: float) -> "Payoff":
        return cls(
            name=f"put_{strike:g}",
            kind="put",
            monotonicity="decreasing",
            fn=lambda s: np.maximum(strike - s, 0.0),
            strike=float(strike),
        )

    @classmethod
    def digital(cls, strike: float) -> "Payoff":
        return cls(
            name=f"digital_{strike:g}",
            kind="digital",
            monotonicity="increasing",
            fn=lambda s: (s > strike).astype(float),
            strike=float(strike),
        )

    @classmethod
    def custom(
        cls,
        name: str,
        fn: Callable[[np.ndarray], np.ndarray],
        monotonicity: str = "none",
    ) -> "Payoff":
        return cls(name=name, kind="custom", monotonicity=monotonicity, fn=fn)

    def check_monotonicity(self, samples: np.ndarray, rtol: float = 1e-9) -> None:
        """Spot-check the declared direction on a sample of states.

        Raises ValueError with a witnessing pair when the sampled values move
        against the declaration.  A "none" declaration always passes.
        """
        if self.monotonicity == "none":
            return
        s = np.unique(np.asarray(samples, dtype=float))
        if s.size < 2:
            return
        v = self.map(s)
        d = np.diff(v)
        slack = rtol * max(float(np.abs(v).max()), 1.0)
        bad = np.flatnonzero(d < -slack) if self.monotonicity == "increasing" else np.flatnonzero(d > slack)
        if bad.size:
            i = int(bad[0])
            raise ValueError(
                f"payoff {self.name!r} declared {self.monotonicity} but maps "
                f"({s[i]:.6g}, {s[i + 1]:.6g}) to ({v[i]:.6g}, {v[i + 1]:.6g})"
            )


# ---------------------------------------------------------------------------
# level quadratures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelQuadrature:
    """Strictly increasing payoff levels at which survival curves are sampled."""

    levels: np.ndarray
    scheme: str

    def __post_init__(self) -> None:
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size < 1:
            raise ValueError("levels must be a nonempty 1-d array")
        if not np.all(np.isfinite(lv)):
            raise ValueError("levels must be finite")
        if lv.size > 1 and not np.all(np.diff(lv) > 0.0):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def from_values(
        cls, values: np.ndarray, count: int = DEFAULT_LEVEL_COUNT, scheme: str = "quantile"
    ) -> "LevelQuadrature":
        """Build levels spanning [min(values), max(values)].

        "quantile" places levels at empirical quantiles so they cluster where
        the sample mass is; "uniform" spaces them evenly.
        """
        if count < 2:
            raise ValueError(f"count must be >= 2, got {count}")
        x = np.asarray(values, dtype=float)
        if scheme == "quantile":
            raw = np.quantile(x, np.linspace(0.0, 1.0, count))
        elif scheme == "uniform":
            raw = np.linspace(x.min(), x.max(), count)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        return cls(levels=np.unique(raw), scheme=scheme)


# ---------------------------------------------------------------------------
# capacities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Capacity:
    """Upper or lower envelope of reweighted probabilities over a family.

    Weights are self-normalised per control, so evaluate() returns exactly 0
    on the empty event and exactly 1 on the full event, and values are
    clipped to [0, 1] against last-ulp rounding.
    """

    orientation: str  # "upper" | "lower"
    family: tuple[ThetaControl, ...]
    weights: np.ndarray  # (n_paths, n_controls)
    totals: np.ndarray  # (n_controls,)

    def __post_init__(self) -> None:
        if self.orientation not in ("upper", "lower"):
            raise ValueError(f"orientation must be 'upper' or 'lower', got {self.orientation!r}")
        if not self.family:
            raise ValueError("capacity requires a nonempty control family")
        if self.weights.shape[1] != len(self.family) or self.totals.shape != (len(self.family),):
            raise ValueError("weight matrix does not match the family")

    @property
    def n_paths(self) -> int:
        return self.weights.shape[0]

    def _reduce(self, per_control: np.ndarray) -> np.ndarray:
        if self.orientation == "upper":
            return per_control.max(axis=-1)
        return per_control.min(axis=-1)

    def evaluate(self, event: np.ndarray) -> float:
        """Capacity of one event given as a boolean path mask."""
        ev = np.asarray(event)
        if ev.shape != (self.n_paths,):
            raise ValueError(f"event shape {ev.shape} does not match paths {self.n_paths}")
        sums = ev.astype(np.float64) @ self.weights
        value = self._reduce(sums / self.totals)
        return float(np.clip(value, 0.0, 1.0))

    def evaluate_many(self, events: np.ndarray) -> np.ndarray:
        """Capacities of a stack of events, shape (n_events, n_paths)."""
        ev = np.asarray(events)
        if ev.ndim != 2 or ev.shape[1] != self.n_paths:
            raise ValueError(f"events must have shape (m, {self.n_paths}), got {ev.shape}")
        sums = ev.astype(np.float64) @ self.weights
        return np.clip(self._reduce(sums / self.totals[None, :]), 0.0, 1.0)

    def _tail_prefix(self, values: np.ndarray):
        x = np.asarray(values, dtype=float)
        order = np.argsort(x, kind="stable")
        sorted_x = x[order]
        prefix = np.vstack([np.zeros((1, len(self.family))), np.cumsum(self.weights[order], axis=0)])
        return sorted_x, prefix

    def _tails_at(self, sorted_x: np.ndarray, prefix: np.ndarray,
                  levels: np.ndarray, strict: bool) -> np.ndarray:
        denom = prefix[-1]
        side = "right" if strict else "left"
        idx = np.searchsorted(sorted_x, np.asarray(levels, dtype=float), side=side)
        tails = denom[None, :] - prefix[idx]
        return np.clip(self._reduce(tails / denom[None, :]), 0.0, 1.0)

    def survival_curve(
        self, values: np.ndarray, levels: np.ndarray, strict: bool = True
    ) -> np.ndarray:
        """Capacity of {values > level} (or >= when strict=False) per level.

        One sort plus one running sum per control covers every level, which is
        what keeps integration affordable on large path counts.
        """
        sorted_x, prefix = self._tail_prefix(values)
        return self._tails_at(sorted_x, prefix, levels, strict)

    def survival_curves(
        self, values: np.ndarray, levels: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Both one-sided survival curves, sharing a single sort and prefix sum.

        Returns (strict, loose): capacities of {values > level} and of
        {values >= level} per level.  The two differ exactly where sample
        mass sits on a level, which is what integration needs to handle
        atoms sitting on quadrature levels without smearing them.
        """
        sorted_x, prefix = self._tail_prefix(values)
        lv = np.asarray(levels, dtype=float)
        return (
            self._tails_at(sorted_x, prefix, lv, strict=True),
            self._tails_at(sorted_x, prefix, lv, strict=False),
        )


def build_capacity(
    orientation: str,
    family: tuple[ThetaControl, ...] | list[ThetaControl],
    bundle: PathBundle,
    weights: np.ndarray | None = None,
    threads: int = 1,
) -> Capacity:
    """Assemble a capacity from a control family on a simulated bundle.

    A precomputed weight matrix may be passed so that upper and lower
    capacities (and the minimax search) share one set of densities.
    """
    family = tuple(family)
    if weights is None:
        weights = weight_matrix(family, bundle, threads=threads)
    # Totals use the same matrix product as evaluate() so that the full event
    # normalises to exactly 1.0 in floating point.
    totals = np.ones(weights.shape[0]) @ weights
    return Capacity(orientation=orientation, family=family, weights=weights, totals=totals)


# ---------------------------------------------------------------------------
# the integral
# ---------------------------------------------------------------------------

def choquet_integral(
    payoff_values: np.ndarray,
    capacity: Capacity,
    quadrature: LevelQuadrature | None = None,
    method: str = "auto",
) -> float:
    """Choquet integral of sampled payoff values against a capacity.

    The sampled capacity is a step function of the level, so the level-set
    integral is a finite sum over the distinct values; method "exact"
    computes that sum outright (a telescoping loop for a few distinct
    values, one sort plus per-control suffix sums otherwise, O(n m) cost)
    and carries no discretization error at any sample size.

    method "quadrature" instead integrates the survival curve by the
    trapezoidal rule on the given levels, using one-sided limits so atoms
    sitting on a level integrate exactly; between levels the curve is
    endpoint-averaged, which overestimates on convex stretches such as far
    tails.  It exists for resolution-controlled work (error bootstraps,
    level-placement studies) where a fixed level budget matters more than
    the last digits.

    method "auto" (default) uses "exact" unless an explicit quadrature is
    passed, in which case the requested levels are honoured.
    """
    x = np.asarray(payoff_values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("payoff_values must be a nonempty 1-d array")
    if not np.all(np.isfinite(x)):
        raise ValueError("payoff_values must be finite")
    if method not in ("auto", "exact", "quadrature"):
        raise ValueError(f"unknown method {method!r}")

    if capacity.weights.shape[1] == 1:
        # A one-member family makes the capacity additive, so the integral
        # collapses to the normalized weighted mean.  Computing it directly
        # is exact and keeps a degenerate family consistent with the plain
        # Monte Carlo estimate to the last bit.
        w = capacity.weights[:, 0]
        if w.size != x.size:
            raise ValueError(
                f"payoff array length {x.size} does not match capacity paths {w.size}"
            )
        return float(np.mean(w * x) * (x.size / float(capacity.totals[0])))

    if method == "exact" or (method == "auto" and quadrature is None):
        distinct = np.unique(x)
        if distinct.size <= SIMPLE_FUNCTION_LIMIT:
            # The evaluate()-based loop keeps indicator payoffs bitwise
            # consistent with capacity.evaluate on the same event.
            total = float(distinct[0])
            for i in range(1, distinct.size):
                total += (distinct[i] - distinct[i - 1]) * capacity.evaluate(x >= distinct[i])
            return total
        sorted_x, prefix = capacity._tail_prefix(x)
        denom = prefix[-1]
        # Tail weight just left of each sorted sample; duplicate positions
        # carry zero width in the dot product, so they need no special case.
        per_control = (denom[None, :] - prefix[1:-1]) / denom[None, :]
        curve = np.clip(capacity._reduce(per_control), 0.0, 1.0)
        return float(sorted_x[0]) + float(np.dot(np.diff(sorted_x), curve))

    distinct = np.unique(x)
    quad = quadrature or LevelQuadrature.from_values(x, DEFAULT_LEVEL_COUNT)
    levels = quad.levels
    span_slack = 1e-12 * max(1.0, float(np.abs(x).max()))
    if levels[0] > distinct[0] + span_slack or levels[-1] < distinct[-1] - span_slack:
        raise ValueError(
            f"quadrature levels [{levels[0]:.6g}, {levels[-1]:.6g}] do not span "
            f"the payoff range [{distinct[0]:.6g}, {distinct[-1]:.6g}]"
        )
    if levels[0] < 0.0 < levels[-1] and not np.any(levels == 0.0):
        levels = np.insert(levels, np.searchsorted(levels, 0.0), 0.0)
    if levels.size == 1:
        return float(levels[0])

    strict_curve, loose_curve = capacity.survival_curves(x, levels)
    widths = np.diff(levels)
    # On [l_j, l_{j+1}] the survival curve is c(X > l_j) just right of the
    # left endpoint and c(X >= l_{j+1}) just left of the right one; using
    # those one-sided limits keeps atoms sitting on levels exact instead of
    # smearing their jump across the segment.
    total = float(np.dot(widths, 0.5 * (strict_curve[:-1] + loose_curve[1:])))
    # Below zero the integrand is c(X > x) - 1; zero is a level whenever the
    # range straddles it, so each segment lies entirely on one side.
    negative = levels[1:] <= 0.0
    total -= float(widths[negative].sum())
    # Regions between 0 and the range of the levels contribute exactly 1 or 0.
    total += max(float(levels[0]), 0.0) + min(float(levels[-1]), 0.0)
    return total


# ---------------------------------------------------------------------------
# structural checks
# ---------------------------------------------------------------------------

def is_comonotone(
    x: np.ndarray, y: np.ndarray
) -> tuple[bool, Optional[tuple[int, int]]]:
    """Whether (x_i - x_j)(y_i - y_j) >= 0 for all sample pairs.

    Returns (True, None) or (False, (i, j)) with a witnessing index pair.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    order = np.lexsort((ya, xa))
    xs = xa[order]
    ys = ya[order]
    drops = np.flatnonzero(np.diff(ys) < 0.0)
    for i in drops:
        # lexsort puts equal-x ties in y order, so a drop across distinct x
        # values is a genuine violation.
        if xs[i + 1] > xs[i]:
            return False, (int(order[i]), int(order[i + 1]))
    return True, None


@dataclass(frozen=True)
class SubmodularityReport:
    orientation: str
    count: int
    violations: np.ndarray  # positive entries are violations
    max_violation: float
    worst_index: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance


def submodularity_check(
    capacity: Capacity,
    event_pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    chunk: int = 64,
    tolerance: float = 0.0,
) -> SubmodularityReport:
    """Evaluate the 2-alternating defect on each event pair.

    For an upper capacity the defect is c(A|B) + c(A&B) - c(A) - c(B), which
    should be <= 0; for a lower capacity the inequality (and so the sign)
    flips.  The report's `violations` are oriented so positive means broken,
    and `passed` allows the given tolerance.
    """
    rows: list[np.ndarray] = []
    defects: list[np.ndarray] = []

    def flush() -> None:
        if not rows:
            return
        vals = capacity.evaluate_many(np.vstack(rows)).reshape(-1, 4)
        d = vals[:, 2] + vals[:, 3] - vals[:, 0] - vals[:, 1]
        defects.append(d if capacity.orientation == "upper" else -d)
        rows.clear()

    for a, b in event_pairs:
        a = np.asarray(a, dtype=bool)
        b = np.asarray(b, dtype=bool)
        rows.extend([a, b, a | b, a & b])
        if len(rows) >= 4 * chunk:
            flush()
    flush()
    if not defects:
        raise ValueError("no event pairs supplied")
    violations = np.concatenate(defects)
    worst = int(np.argmax(violations))
    return SubmodularityReport(
        orientation=capacity.orientation,
        count=violations.size,
        violations=violations,
        max_violation=float(violations[worst]),
        worst_index=worst,
        tolerance=float(tolerance),
    )


def random_threshold_pairs(
    values: np.ndarray,
    count: int,
    rng: np.random.Generator,
    nested_fraction: float = 0.3,
):
    """Yield (A, B) pairs of threshold events on the given sample values.

    Thresholds sit at random quantiles in [0.05, 0.95]; a `nested_fraction`
    share of pairs uses the same direction on both thresholds so that one
    event contains the other.
    """
    x = np.asarray(values, dtype=float)
    lo, hi = np.quantile(x, [0.05, 0.95])
    for _ in range(count):
        ta, tb = rng.uniform(lo, hi, size=2)
        same_direction = rng.uniform() < nested_fraction
        dir_a = rng.uniform() < 0.5
        dir_b = dir_a if same_direction else (rng.uniform() < 0.5)
        a = (x > ta) if dir_a else (x <= ta)
        b = (x > tb) if dir_b else (x <= tb)
        yield a, b


@dataclass(frozen=True)
class HolderReport:
    p: float
    q: float
    lhs: float
    factor_x: float
    factor_y: float
    rhs: float
    margin: float  # rhs - lhs, negative means violated
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance


def choquet_holder_check(
    x_values: np.ndarray,
    y_values: np.ndarray,
    capacity: Capacity,
    p: float = 2.0,
    q: float = 2.0,
    quadrature_count: int = DEFAULT_LEVEL_COUNT,
    bootstrap: int = 12,
    rng: np.random.Generator | None = None,
    relative_slack: float = 1e-3,
) -> HolderReport:
    """Check integral of |XY| <= (integral |X|^p)^(1/p) (integral |Y|^q)^(1/q).

    The tolerance combines a bootstrap estimate of the sampling noise of the
    margin with a small relative slack for quadrature error.  Exponents must
    be conjugate: 1/p + 1/q = 1 with p, q > 1.
    """
    if not (p > 1.0 and q > 1.0) or abs(1.0 / p + 1.0 / q - 1.0) > 1e-9:
        raise ValueError(f"exponents must be conjugate with p, q > 1, got p={p}, q={q}")
    xa = np.abs(np.asarray(x_values, dtype=float))
    ya = np.abs(np.asarray(y_values, dtype=float))
    if xa.shape != ya.shape:
        raise ValueError("x and y must have equal length")

    def margin_parts(cap: Capacity) -> tuple[float, float, float]:
        lhs = choquet_integral(xa * ya, cap, LevelQuadrature.from_values(xa * ya, quadrature_count))
        fx = choquet_integral(xa**p, cap, LevelQuadrature.from_values(xa**p, quadrature_count))
        fy = choquet_integral(ya**q, cap, LevelQuadrature.from_values(ya**q, quadrature_count))
        return lhs, max(fx, 0.0) ** (1.0 / p), max(fy, 0.0) ** (1.0 / q)

    lhs, factor_x, factor_y = margin_parts(capacity)
    rhs = factor_x * factor_y
    margin = rhs - lhs

    boot_sd = 0.0
    if bootstrap > 0:
        rng = rng or np.random.default_rng(0)
        n = capacity.n_paths
        margins = np.empty(bootstrap)
        for b in range(bootstrap):
            mult = rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
            resampled = Capacity(
                orientation=capacity.orientation,
                family=capacity.family,
                weights=capacity.weights * mult[:, None],
                totals=mult @ capacity.weights,
            )
            bl, bx, by = margin_parts(resampled)
            margins[b] = bx * by - bl
        boot_sd = float(margins.std(ddof=1))

    tolerance = 3.0 * boot_sd + relative_slack * max(abs(rhs), abs(lhs), 1e-12)
    return HolderReport(
        p=p, q=q, lhs=lhs, factor_x=factor_x, factor_y=factor_y,
        rhs=rhs, margin=margin, tolerance=tolerance,
    )
