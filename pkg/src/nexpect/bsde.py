"""Backward equation solvers for nonlinear expectations of terminal claims.

The value solves a semilinear parabolic equation in log-state coordinates:

    u_t + 0.5 * sv^2 u_xx + mv u_x + g(t, u, sv * u_x) = 0,   u(T, x) = payoff(e^x)

with sv(t, x) = vol(t, s)/s and mv(t, x) = drift(t, s)/s - 0.5 * sv^2 at
s = e^x.  The driver g(t, y, z) with g = +k|z| gives the upper expectation,
g = -k|z| the lower one, and a linear driver nu * z reproduces the single
measure whose drift distortion is nu.

solve_fd marches an explicit scheme backward from the terminal condition;
solve_tree is an independent recombining-lattice oracle for proportional
(GBM) coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .choquet import Payoff
from .errors import GridTooCoarseError, InvalidGeneratorError
from .paths import MarketModel

DEFAULT_NODES = 801
DEFAULT_TIME_STEPS = 2000
DEFAULT_WIDTH_SDS = 6.0
STABILITY_SAFETY = 0.9


@dataclass(frozen=True)
class Generator:
    """Driver g(t, y, z) of the backward equation.

    Kinds: "linear" is nu * z; "abs_upper" is +k|z|; "abs_lower" is -k|z|;
    "custom" wraps an arbitrary vectorised callable with a declared Lipschitz
    constant in z.  All drivers must vanish at z = 0 so that constants are
    fixed points of the expectation; custom ones are sample-checked for this
    and for the declared Lipschitz bound before a solve runs.
    """

    kind: str
    nu: float = 0.0
    k: float = 0.0
    fn: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    lipschitz_z: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "linear":
            if not np.isfinite(self.nu):
                raise InvalidGeneratorError(f"linear coefficient must be finite, got {self.nu}")
        elif self.kind in ("abs_upper", "abs_lower"):
            if not np.isfinite(self.k) or self.k < 0.0:
                raise InvalidGeneratorError(f"bound k must be >= 0, got {self.k}")
        elif self.kind == "custom":
            if self.fn is None:
                raise InvalidGeneratorError("custom generator requires a callable")
            if not np.isfinite(self.lipschitz_z) or self.lipschitz_z < 0.0:
                raise InvalidGeneratorError("custom generator requires a Lipschitz constant >= 0")
        else:
            raise InvalidGeneratorError(f"unknown generator kind {self.kind!r}")

    @classmethod
    def linear(cls, nu: float) -> "Generator":
        return cls(kind="linear", nu=float(nu), lipschitz_z=abs(float(nu)))

    @classmethod
    def abs_upper(cls, k: float) -> "Generator":
        return cls(kind="abs_upper", k=float(k), lipschitz_z=float(k))

    @classmethod
    def abs_lower(cls, k: float) -> "Generator":
        return cls(kind="abs_lower", k=float(k), lipschitz_z=float(k))

    @classmethod
    def custom(
        cls,
        fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
        lipschitz_z: float,
    ) -> "Generator":
        return cls(kind="custom", fn=fn, lipschitz_z=float(lipschitz_z))

    def g(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.nu * z
        if self.kind == "abs_upper":
            return self.k * np.abs(z)
        if self.kind == "abs_lower":
            return -self.k * np.abs(z)
        return self.fn(t, y, z)


def _validate_custom_generator(gen: Generator, horizon: float, y_scale: float, z_scale: float) -> None:
    """Sample-check g(t, y, 0) = 0 and the declared z-Lipschitz bound."""
    if gen.kind != "custom":
        return
    ts = np.linspace(0.0, horizon, 5)
    ys = np.linspace(-y_scale, y_scale, 5)
    zs = np.concatenate([-np.geomspace(z_scale, z_scale * 1e-6, 7), [0.0],
                         np.geomspace(z_scale * 1e-6, z_scale, 7)])
    tiny = 1e-9 * max(1.0, y_scale)
    for t in ts:
        for y in ys:
            ya = np.full(zs.shape, y)
            gz = np.asarray(gen.g(float(t), ya, zs), dtype=float)
            if not np.all(np.isfinite(gz)):
                raise InvalidGeneratorError("custom generator produced non-finite values")
            at_zero = float(gen.g(float(t), np.array([y]), np.array([0.0]))[0])
            if abs(at_zero) > tiny:
                raise InvalidGeneratorError(
                    f"custom generator violates g(t, y, 0) = 0 at t={t:.4g}, y={y:.4g}: got {at_zero:.3g}"
                )
            # Pairwise Lipschitz check against the declared constant.
            dz = np.abs(zs[:, None] - zs[None, :])
            dg = np.abs(gz[:, None] - gz[None, :])
            mask = dz > 0.0
            if np.any(dg[mask] > gen.lipschitz_z * dz[mask] * (1.0 + 1e-6) + tiny):
                i, j = np.unravel_index(int(np.argmax(dg - gen.lipschitz_z * dz)), dg.shape)
                raise InvalidGeneratorError(
                    f"custom generator exceeds declared Lipschitz constant {gen.lipschitz_z:.4g} "
                    f"between z={zs[i]:.4g} and z={zs[j]:.4g} at t={t:.4g}, y={y:.4g}"
                )


@dataclass(frozen=True)
class GridSolution:
    """Output of the finite-difference march.

    `space_grid` holds log-state nodes; surfaces have one row per time level
    (row 0 is t = 0) and one column per node.  `z_surface` is the volatility
    times the state-derivative of the value, the integrand-of-noise term of
    the backward equation.  Surfaces are None when storage was disabled.
    """

    model: MarketModel
    payoff: Payoff
    space_grid: np.ndarray
    dt: float
    time_steps: int
    y0: float
    value_surface: Optional[np.ndarray] = None
    z_surface: Optional[np.ndarray] = None

    def times(self) -> np.ndarray:
        return np.arange(self.time_steps + 1) * self.dt


def _log_coefficients(model: MarketModel):
    """Return vectorised (mv, sv) on log-state nodes; constants for GBM."""
    if model.gbm_constants is not None:
        mu, sigma = model.gbm_constants
        mv_const = mu - 0.5 * sigma * sigma

        def mv(t: float, x: np.ndarray) -> np.ndarray:
            return np.full_like(x, mv_const)

        def sv(t: float, x: np.ndarray) -> np.ndarray:
            return np.full_like(x, sigma)

        return mv, sv, True

    def sv(t: float, x: np.ndarray) -> np.ndarray:
        s = np.exp(x)
        return np.asarray(model.vol(t, s), dtype=float) / s

    def mv(t: float, x: np.ndarray) -> np.ndarray:
        s = np.exp(x)
        sig = np.asarray(model.vol(t, s), dtype=float) / s
        return np.asarray(model.drift(t, s), dtype=float) / s - 0.5 * sig * sig

    return mv, sv, False


def minimal_time_steps(
    model: MarketModel,
    horizon: float,
    nodes: int = DEFAULT_NODES,
    width_sds: float = DEFAULT_WIDTH_SDS,
    lipschitz_z: float = 0.0,
    safety: float = STABILITY_SAFETY,
) -> int:
    """Smallest explicit-scheme step count stable on the implied grid.

    The binding constraint is dt <= safety * dx^2 / max(sv)^2; an advection
    bound dt <= safety * dx / max(|mv| + L * sv) covers degenerate diffusion.
    """
    mv, sv, _ = _log_coefficients(model)
    x0 = math.log(model.s0)
    sigma_ref = float(sv(0.0, np.array([x0]))[0])
    if sigma_ref <= 0.0:
        sigma_ref = 1e-8
    half = width_sds * sigma_ref * math.sqrt(horizon)
    dx = 2.0 * half / (nodes - 1)
    x = x0 + np.linspace(-half, half, nodes)
    sv_max = 0.0
    adv_max = 0.0
    for t in np.linspace(0.0, horizon, 5):
        sv_t = np.abs(np.asarray(sv(float(t), x), dtype=float))
        mv_t = np.abs(np.asarray(mv(float(t), x), dtype=float))
        sv_max = max(sv_max, float(sv_t.max()))
        adv_max = max(adv_max, float((mv_t + lipschitz_z * sv_t).max()))
    dt_bounds = []
    if sv_max > 0.0:
        dt_bounds.append(safety * dx * dx / (sv_max * sv_max))
    if adv_max > 0.0:
        dt_bounds.append(safety * dx / adv_max)
    if not dt_bounds:
        return 1
    return max(1, int(math.ceil(horizon / min(dt_bounds))))


def solve_fd(
    model: MarketModel,
    payoff: Payoff,
    generator: Generator,
    horizon: float,
    nodes: int = DEFAULT_NODES,
    time_steps: int = DEFAULT_TIME_STEPS,
    substep: bool = True,
    width_sds: float = DEFAULT_WIDTH_SDS,
    store_surfaces: bool = True,
) -> GridSolution:
    """March the semilinear equation backward on an explicit log-space grid.

    The grid is centred at log(s0) with half-width `width_sds` reference
    standard deviations.  When the requested `time_steps` violates the
    stability bound, the scheme substeps to the minimal stable count by
    default; with substep=False it raises GridTooCoarseError naming that
    count instead.  Boundary rows extrapolate linearly (zero curvature).
    """
    if nodes < 5:
        raise ValueError(f"nodes must be >= 5, got {nodes}")
    if time_steps < 1:
        raise ValueError(f"time_steps must be >= 1, got {time_steps}")
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")

    mv_fn, sv_fn, constant_coeffs = _log_coefficients(model)
    x0 = math.log(model.s0)
    sigma_ref = float(sv_fn(0.0, np.array([x0]))[0])
    if sigma_ref <= 0.0:
        sigma_ref = 1e-8
    half = width_sds * sigma_ref * math.sqrt(horizon)
    x = x0 + np.linspace(-half, half, nodes)
    dx = x[1] - x[0]

    m_min = minimal_time_steps(model, horizon, nodes, width_sds, generator.lipschitz_z)
    if time_steps < m_min:
        if not substep:
            raise GridTooCoarseError(
                f"explicit scheme unstable: {time_steps} time steps on {nodes} nodes; "
                f"minimal admissible time_steps is {m_min}",
                minimal_time_steps=m_min,
            )
        m = m_min
    else:
        m = time_steps
    dt = horizon / m

    states = np.exp(x)
    u = payoff.map(states)
    y_scale = max(1.0, float(np.abs(u).max()))
    _validate_custom_generator(generator, horizon, y_scale, z_scale=max(1.0, sigma_ref * y_scale))

    if constant_coeffs:
        mv_row = mv_fn(0.0, x[1:-1])
        sv_row = sv_fn(0.0, x[1:-1])

    value_surface = np.empty((m + 1, nodes)) if store_surfaces else None
    z_surface = np.empty((m + 1, nodes)) if store_surfaces else None

    def z_row(t: float, row: np.ndarray) -> np.ndarray:
        gz = np.empty_like(row)
        gz[1:-1] = (row[2:] - row[:-2]) / (2.0 * dx)
        gz[0] = (row[1] - row[0]) / dx
        gz[-1] = (row[-1] - row[-2]) / dx
        return sv_fn(t, x) * gz

    if store_surfaces:
        value_surface[m] = u
        z_surface[m] = z_row(horizon, u)

    for step in range(m, 0, -1):
        t_known = step * dt
        if not constant_coeffs:
            mv_row = mv_fn(t_known, x[1:-1])
            sv_row = sv_fn(t_known, x[1:-1])
        d2 = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (dx * dx)
        d1 = (u[2:] - u[:-2]) / (2.0 * dx)
        z = sv_row * d1
        interior = u[1:-1] + dt * (
            0.5 * sv_row * sv_row * d2 + mv_row * d1 + generator.g(t_known, u[1:-1], z)
        )
        nxt = np.empty_like(u)
        nxt[1:-1] = interior
        nxt[0] = 2.0 * nxt[1] - nxt[2]
        nxt[-1] = 2.0 * nxt[-2] - nxt[-3]
        u = nxt
        if store_surfaces:
            value_surface[step - 1] = u
            z_surface[step - 1] = z_row(t_known - dt, u)

    if not np.all(np.isfinite(u)):
        raise GridTooCoarseError(
            f"explicit march diverged on {nodes} nodes x {m} steps; "
            f"minimal admissible time_steps is {m_min}",
            minimal_time_steps=m_min,
        )

    if nodes % 2 == 1:
        y0 = float(u[(nodes - 1) // 2])
    else:
        y0 = float(np.interp(x0, x, u))

    return GridSolution(
        model=model,
        payoff=payoff,
        space_grid=x,
        dt=dt,
        time_steps=m,
        y0=y0,
        value_surface=value_surface,
        z_surface=z_surface,
    )


def solve_tree(
    model: MarketModel,
    payoff: Payoff,
    generator: Generator,
    horizon: float,
    steps: int,
) -> float:
    """Recombining-lattice value at time zero; an oracle independent of solve_fd.

    Only proportional (GBM) coefficients are supported.  Each backward node
    averages its children and adds dt * g evaluated at the lattice estimate
    of z, the scaled child difference.
    """
    if model.gbm_constants is None:
        raise ValueError("tree oracle requires proportional (GBM) coefficients")
    if steps < 8:
        raise ValueError(f"steps must be >= 8 for the lattice oracle, got {steps}")
    mu, sigma = model.gbm_constants
    dt = horizon / steps
    sq = math.sqrt(dt)
    drift = (mu - 0.5 * sigma * sigma) * dt
    x0 = math.log(model.s0)

    j = np.arange(steps + 1)
    x_terminal = x0 + steps * drift + sigma * sq * (2.0 * j - steps)
    y = payoff.map(np.exp(x_terminal))
    for i in range(steps - 1, -1, -1):
        t = i * dt
        y_dn = y[:-1]
        y_up = y[1:]
        mid = 0.5 * (y_up + y_dn)
        if sigma > 0.0:
            z = (y_up - y_dn) / (2.0 * sq)
        else:
            z = np.zeros_like(mid)
        y = mid + dt * generator.g(t, mid, z)
    return float(y[0])


@dataclass(frozen=True)
class ComparisonReport:
    y0_low: float
    y0_high: float
    gap: float  # y0_high - y0_low
    tolerance: float
    min_surface_gap: Optional[float] = None

    @property
    def passed(self) -> bool:
        ok = self.gap >= -self.tolerance
        if self.min_surface_gap is not None:
            ok = ok and self.min_surface_gap >= -self.tolerance
        return ok


def comparison_check(
    model: MarketModel,
    payoff: Payoff,
    generator_low: Generator,
    generator_high: Generator,
    horizon: float,
    nodes: int = DEFAULT_NODES,
    time_steps: int = DEFAULT_TIME_STEPS,
    tolerance: Optional[float] = None,
    compare_surfaces: bool = False,
) -> ComparisonReport:
    """Verify that a pointwise-dominating driver yields a larger value.

    First spot-checks generator_low <= generator_high on sampled (t, y, z)
    triples, raising ValueError with a witness when the precondition fails;
    then solves both equations on the same grid and compares.  The default
    tolerance is 0.5% of the value scale, covering scheme error only.
    """
    x0 = math.log(model.s0)
    _, sv_fn, _ = _log_coefficients(model)
    sigma_ref = float(sv_fn(0.0, np.array([x0]))[0])
    spread = 3.0 * max(sigma_ref, 1e-8) * math.sqrt(horizon)
    sample_states = model.s0 * np.exp(np.linspace(-spread, spread, 9))
    y_scale = max(1.0, float(np.abs(payoff.map(sample_states)).max()))
    z_scale = max(1.0, sigma_ref * y_scale)
    for t in np.linspace(0.0, horizon, 5):
        for y in np.linspace(-y_scale, y_scale, 7):
            zs = np.linspace(-z_scale, z_scale, 7)
            ya = np.full(zs.shape, y)
            lo = np.asarray(generator_low.g(float(t), ya, zs), dtype=float)
            hi = np.asarray(generator_high.g(float(t), ya, zs), dtype=float)
            bad = np.flatnonzero(lo > hi + 1e-12 * max(1.0, z_scale))
            if bad.size:
                i = int(bad[0])
                raise ValueError(
                    f"generator ordering violated at witness "
                    f"(t={t:.6g}, y={y:.6g}, z={zs[i]:.6g}): "
                    f"low={lo[i]:.6g} > high={hi[i]:.6g}"
                )

    sol_low = solve_fd(model, payoff, generator_low, horizon, nodes, time_steps,
                       store_surfaces=compare_surfaces)
    sol_high = solve_fd(model, payoff, generator_high, horizon, nodes, time_steps,
                        store_surfaces=compare_surfaces)
    scale = max(1.0, abs(sol_low.y0), abs(sol_high.y0))
    tol = 0.005 * scale if tolerance is None else tolerance
    min_gap = None
    if compare_surfaces:
        min_gap = float((sol_high.value_surface - sol_low.value_surface).min())
    return ComparisonReport(
        y0_low=sol_low.y0,
        y0_high=sol_high.y0,
        gap=sol_high.y0 - sol_low.y0,
        tolerance=tol,
        min_surface_gap=min_gap,
    )


@dataclass(frozen=True)
class ZSignReport:
    status: str  # "pass" | "fail" | "not_applicable"
    monotonicity: str
    extreme: float
    threshold: float
    band: float

    @property
    def passed(self) -> bool:
        return self.status != "fail"


def z_sign_check(solution: GridSolution, band: float = 0.9, threshold: Optional[float] = None) -> ZSignReport:
    """Check the sign of the z-surface implied by the payoff's monotonicity.

    Increasing payoffs must keep z >= -threshold and decreasing payoffs
    z <= +threshold on the central `band` fraction of space nodes at all
    times before the terminal one.  Payoffs without declared monotonicity
    yield a not_applicable report.
    """
    if solution.z_surface is None:
        raise ValueError("solution was computed without stored surfaces")
    if not (0.0 < band <= 1.0):
        raise ValueError(f"band must be in (0, 1], got {band}")
    mono = solution.payoff.monotonicity
    thr = 1e-6 * solution.model.s0 if threshold is None else threshold
    if mono == "none":
        return ZSignReport(status="not_applicable", monotonicity=mono, extreme=float("nan"),
                           threshold=thr, band=band)
    nodes = solution.space_grid.size
    margin = int(round(0.5 * (1.0 - band) * nodes))
    hi = nodes - margin
    core = solution.z_surface[:-1, margin:hi]
    if mono == "increasing":
        extreme = float(core.min())
        ok = extreme >= -thr
    else:
        extreme = float(core.max())
        ok = extreme <= thr
    return ZSignReport(status="pass" if ok else "fail", monotonicity=mono,
                       extreme=extreme, threshold=thr, band=band)
