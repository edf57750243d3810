"""Path generation and forward simulation."""

from __future__ import annotations

import math

import numpy as np
import pytest

from nexpect import (
    MarketModel,
    SimulationFailureError,
    TimeGrid,
    generate_brownian,
    simulate_sde,
)
from tests.conftest import MEAN_ST_MU5


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    grid = TimeGrid(2.0, 8)
    assert grid.dt == 0.25
    assert grid.times()[0] == 0.0
    assert grid.times()[-1] == 2.0


def test_model_validation():
    with pytest.raises(ValueError):
        MarketModel.gbm(-1.0, 0.0, 0.2)
    with pytest.raises(ValueError):
        MarketModel.gbm(100.0, 0.0, 0.2, k=-0.1)
    with pytest.raises(ValueError):
        MarketModel.gbm(100.0, 0.0, -0.2)


def test_brownian_shape_and_validation():
    grid = TimeGrid(1.0, 4)
    bundle = generate_brownian(grid, 100, 7)
    assert bundle.brownian_increments.shape == (100, 4)
    assert bundle.states is None
    with pytest.raises(ValueError):
        generate_brownian(grid, 0, 7)


def test_brownian_moments():
    grid = TimeGrid(1.0, 4)
    bundle = generate_brownian(grid, 200_000, 42)
    inc = bundle.brownian_increments
    # mean ~ 0 within 4 SE; per-column variance within 1% of dt
    se = math.sqrt(grid.dt / inc.size)
    assert abs(inc.mean()) < 4.0 * se
    assert np.allclose(inc.var(axis=0), grid.dt, rtol=0.01)
    bt = bundle.terminal_brownian()
    assert abs(bt.mean()) < 4.0 / math.sqrt(bundle.n_paths)
    assert abs(bt.var() - 1.0) < 0.02


def test_brownian_determinism():
    grid = TimeGrid(1.0, 8)
    a = generate_brownian(grid, 1000, 123).brownian_increments
    b = generate_brownian(grid, 1000, 123).brownian_increments
    c = generate_brownian(grid, 1000, 124).brownian_increments
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_degenerate_gbm_is_constant():
    model = MarketModel.gbm(100.0, 0.0, 0.0)
    bundle = simulate_sde(model, generate_brownian(TimeGrid(1.0, 8), 50, 3))
    assert np.all(bundle.states == 100.0)
    assert np.all(bundle.valid)


def test_exact_gbm_starts_at_s0_and_martingale():
    model = MarketModel.gbm(100.0, 0.0, 0.2)
    bundle = simulate_sde(model, generate_brownian(TimeGrid(1.0, 8), 100_000, 5))
    assert np.all(bundle.states[:, 0] == 100.0)
    term = bundle.terminal()
    se = term.std(ddof=1) / math.sqrt(term.size)
    assert abs(term.mean() - 100.0) < 3.0 * se


def test_exact_gbm_mean_with_drift():
    model = MarketModel.gbm(100.0, 0.05, 0.2)
    bundle = simulate_sde(model, generate_brownian(TimeGrid(1.0, 8), 200_000, 11))
    term = bundle.terminal()
    se = term.std(ddof=1) / math.sqrt(term.size)
    assert abs(term.mean() - MEAN_ST_MU5) < 3.0 * se


def test_exact_gbm_log_moments():
    mu, sigma = 0.05, 0.3
    model = MarketModel.gbm(100.0, mu, sigma)
    bundle = simulate_sde(model, generate_brownian(TimeGrid(1.0, 4), 100_000, 17))
    logs = np.log(bundle.terminal() / 100.0)
    target_mean = mu - 0.5 * sigma**2
    se_mean = logs.std(ddof=1) / math.sqrt(logs.size)
    assert abs(logs.mean() - target_mean) < 4.0 * se_mean
    assert abs(logs.var(ddof=1) - sigma**2) < 4.0 * sigma**2 * math.sqrt(2.0 / logs.size)


def test_euler_matches_exact_at_order_one():
    """Mean error of the Euler scheme shrinks linearly in dt.

    For proportional coefficients E[S_T^euler] = s0 (1 + mu dt)^N, so the
    error against s0 e^{mu T} is known in closed form; the sampled means
    must track it and halve as steps double.
    """
    mu, sigma, s0 = 0.2, 0.2, 100.0
    drift = lambda t, s: mu * s
    vol = lambda t, s: sigma * s
    target = s0 * math.exp(mu)
    gaps = []
    for steps in (4, 8, 16):
        model = MarketModel.general(s0, drift, vol)
        bundle = simulate_sde(model, generate_brownian(TimeGrid(1.0, steps), 400_000, 21))
        term = bundle.terminal()[bundle.valid]
        exact_scheme_mean = s0 * (1.0 + mu / steps) ** steps
        se = term.std(ddof=1) / math.sqrt(term.size)
        # The sample mean must match the scheme's exact mean...
        assert abs(term.mean() - exact_scheme_mean) < 4.0 * se
        gaps.append(abs(exact_scheme_mean - target))
    # ...and the scheme bias is first order in dt.
    assert 0.3 < gaps[1] / gaps[0] < 0.7
    assert 0.3 < gaps[2] / gaps[1] < 0.7


def test_euler_flags_nonpositive_paths():
    # Multiplicative Euler with one big step: S1 = s0 (1 + sigma dB), so a
    # 0.3-sigma coefficient leaves ~0.04% of paths nonpositive: flagged, not fatal.
    model = MarketModel.general(1.0, lambda t, s: 0.0 * s, lambda t, s: 0.3 * s)
    bundle = simulate_sde(model, generate_brownian(TimeGrid(1.0, 1), 100_000, 31))
    n_bad = int((~bundle.valid).sum())
    assert 0 < n_bad < 100
    assert np.all(bundle.states[~bundle.valid, -1] <= 0.0)
    assert np.all(bundle.states[bundle.valid, -1] > 0.0)


def test_euler_failure_above_threshold():
    # 0.45-sigma in one step drives ~1.3% of paths nonpositive: hard failure.
    model = MarketModel.general(1.0, lambda t, s: 0.0 * s, lambda t, s: 0.45 * s)
    with pytest.raises(SimulationFailureError):
        simulate_sde(model, generate_brownian(TimeGrid(1.0, 1), 100_000, 31))


def test_terminal_requires_states():
    bundle = generate_brownian(TimeGrid(1.0, 4), 10, 1)
    with pytest.raises(ValueError):
        bundle.terminal()
