"""Drift controls, density weights, and reweighted expectations."""

from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from nexpect import (
    InvalidControlError,
    MarketModel,
    ThetaControl,
    TimeGrid,
    default_control_family,
    expectation_profile,
    expectation_under,
    generate_brownian,
    girsanov_weights,
    simulate_sde,
    weight_matrix,
)
from nexpect.minimax import closed_under_negation
from tests.conftest import CALL_ATM_FLAT, MEAN_ST_DRIFT_UP


# ---------------------------------------------------------------------------
# control validation
# ---------------------------------------------------------------------------

def test_constant_control_bound():
    ThetaControl.constant(0.1, 0.1)
    with pytest.raises(InvalidControlError):
        ThetaControl.constant(0.2, 0.1)
    with pytest.raises(InvalidControlError):
        ThetaControl.constant(0.0, -1.0)


def test_bang_bang_validation():
    ThetaControl.bang_bang((0.5,), (1, -1), 0.1, 0.1)
    with pytest.raises(InvalidControlError):
        ThetaControl.bang_bang((0.5,), (1, -1), 0.2, 0.1)  # level above bound
    with pytest.raises(InvalidControlError):
        ThetaControl.bang_bang((0.5,), (1, -1, 1), 0.1, 0.1)  # sign count
    with pytest.raises(InvalidControlError):
        ThetaControl.bang_bang((0.5,), (1, 2), 0.1, 0.1)  # sign values
    with pytest.raises(InvalidControlError):
        ThetaControl.bang_bang((0.7, 0.3), (1, -1, 1), 0.1, 0.1)  # not increasing
    with pytest.raises(InvalidControlError):
        ThetaControl.bang_bang((0.0,), (1, -1), 0.1, 0.1)  # switch at endpoint
    with pytest.raises(InvalidControlError):
        ThetaControl(bound=0.1, kind="sinusoid")


def test_theta_on_grid_bang_bang():
    grid = TimeGrid(1.0, 4)
    control = ThetaControl.bang_bang((0.5,), (1, -1), 0.1, 0.1)
    assert np.array_equal(control.theta_on_grid(grid), [0.1, 0.1, -0.1, -0.1])
    control2 = ThetaControl.bang_bang((0.25, 0.75), (-1, 1, -1), 0.1, 0.1)
    assert np.array_equal(control2.theta_on_grid(grid), [-0.1, 0.1, 0.1, -0.1])


def test_negated_round_trip():
    c = ThetaControl.bang_bang((0.3, 0.6), (1, -1, 1), 0.05, 0.1)
    assert c.negated().negated() == c
    assert ThetaControl.constant(0.1, 0.1).negated().theta0 == -0.1


# ---------------------------------------------------------------------------
# density weights
# ---------------------------------------------------------------------------

def test_zero_control_weights_are_one(bundle_50k):
    dw = girsanov_weights(ThetaControl.constant(0.0, 0.1), bundle_50k)
    assert np.all(dw.weights == 1.0)
    assert dw.mean == 1.0


def test_constant_weights_match_formula(bundle_50k):
    k = 0.1
    dw = girsanov_weights(ThetaControl.constant(k, k), bundle_50k)
    bt = bundle_50k.terminal_brownian()
    expected = np.exp(k * bt - 0.5 * k * k * bundle_50k.grid.horizon)
    assert np.allclose(dw.weights, expected, rtol=1e-12)
    assert np.all(dw.weights > 0.0)


def test_bang_bang_weights_match_manual():
    grid = TimeGrid(1.0, 4)
    bundle = generate_brownian(grid, 1000, 77)
    control = ThetaControl.bang_bang((0.5,), (1, -1), 0.1, 0.1)
    dw = girsanov_weights(control, bundle)
    inc = bundle.brownian_increments
    theta = np.array([0.1, 0.1, -0.1, -0.1])
    manual = np.exp(inc @ theta - 0.5 * 0.01 * 1.0)
    assert np.allclose(dw.weights, manual, rtol=1e-12)


def test_weights_martingale_mean(acc_model, grid8):
    bundle = simulate_sde(acc_model, generate_brownian(grid8, 500_000, 2024))
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # a deviation warning would fail the test
        dw = girsanov_weights(ThetaControl.constant(0.1, 0.1), bundle)
    assert abs(dw.mean - 1.0) <= 4.0 * dw.std_error


def test_weights_second_moment_bound(bundle_200k):
    # E[w^2] = e^{k^2 T} for a constant control at the bound.
    k, horizon = 0.1, 1.0
    dw = girsanov_weights(ThetaControl.constant(k, k), bundle_200k)
    w2 = dw.weights**2
    se = w2.std(ddof=1) / math.sqrt(w2.size)
    assert w2.mean() <= math.exp(k * k * horizon) + 4.0 * se


# ---------------------------------------------------------------------------
# reweighted expectations
# ---------------------------------------------------------------------------

def test_expectation_constant_payoff_exact_at_zero(bundle_50k):
    control = ThetaControl.constant(0.0, 0.1)
    dw = girsanov_weights(control, bundle_50k)
    values = np.full(bundle_50k.n_paths, 3.25)
    est, se = expectation_under(control, values, dw)
    assert est == 3.25
    assert se == 0.0


def test_expectation_drift_shift(bundle_200k):
    # theta = +k on a driftless market prices S_T at 100 e^{+k sigma T}.
    control = ThetaControl.constant(0.1, 0.1)
    dw = girsanov_weights(control, bundle_200k)
    est, se = expectation_under(control, bundle_200k.terminal(), dw)
    assert abs(est - MEAN_ST_DRIFT_UP) < 3.0 * se


def test_expectation_flat_call(bundle_200k):
    control = ThetaControl.constant(0.0, 0.1)
    dw = girsanov_weights(control, bundle_200k)
    values = np.maximum(bundle_200k.terminal() - 100.0, 0.0)
    est, se = expectation_under(control, values, dw)
    assert abs(est - CALL_ATM_FLAT) < 3.0 * se


def test_measure_change_matches_direct_simulation(grid8):
    """Reweighting the driftless world equals simulating the shifted world."""
    shifted = MarketModel.gbm(100.0, 0.02, 0.2)
    direct = simulate_sde(shifted, generate_brownian(grid8, 200_000, 555))
    direct_vals = np.maximum(direct.terminal() - 100.0, 0.0)
    direct_est = direct_vals.mean()
    direct_se = direct_vals.std(ddof=1) / math.sqrt(direct_vals.size)

    flat = MarketModel.gbm(100.0, 0.0, 0.2)
    base = simulate_sde(flat, generate_brownian(grid8, 200_000, 556))
    control = ThetaControl.constant(0.1, 0.1)
    est, se = expectation_under(
        control, np.maximum(base.terminal() - 100.0, 0.0), girsanov_weights(control, base)
    )
    assert abs(est - direct_est) < 4.0 * math.hypot(se, direct_se)


def test_expectation_validation(bundle_50k):
    control = ThetaControl.constant(0.05, 0.1)
    other = ThetaControl.constant(0.03, 0.1)
    dw = girsanov_weights(control, bundle_50k)
    with pytest.raises(ValueError):
        expectation_under(other, np.ones(bundle_50k.n_paths), dw)
    with pytest.raises(ValueError):
        expectation_under(control, np.ones(10), dw)


# ---------------------------------------------------------------------------
# family machinery
# ---------------------------------------------------------------------------

def test_weight_matrix_threads_identical(family_k01, bundle_50k):
    a = weight_matrix(family_k01, bundle_50k, threads=1)
    b = weight_matrix(family_k01, bundle_50k, threads=4)
    assert np.array_equal(a, b)


def test_expectation_profile_shapes(family_k01, bundle_50k, weights_50k):
    values = bundle_50k.terminal()
    est, ses = expectation_profile(values, family_k01, bundle_50k, weights=weights_50k)
    assert est.shape == (len(family_k01),)
    assert np.all(ses > 0.0)
    with pytest.raises(ValueError):
        expectation_profile(values[:10], family_k01, bundle_50k, weights=weights_50k)


def test_default_family_structure():
    family = default_control_family(0.1, grid_count=21)
    assert len(family) == 29  # 21 constants + 8 bang-bang
    constants = [c for c in family if c.kind == "constant"]
    assert len(constants) == 21
    thetas = sorted(c.theta0 for c in constants)
    assert thetas[0] == -0.1 and thetas[-1] == 0.1
    assert 0.0 in thetas
    assert closed_under_negation(family)
    assert all(abs(c.level) <= 0.1 + 1e-15 for c in family if c.kind == "bang_bang")
    assert all(len(c.switch_times) <= 4 for c in family if c.kind == "bang_bang")


def test_default_family_degenerate():
    family = default_control_family(0.0)
    assert len(family) == 1
    assert family[0].kind == "constant" and family[0].theta0 == 0.0
