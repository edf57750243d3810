"""Shared fixtures: one simulated market reused across the module tests."""

from __future__ import annotations

import numpy as np
import pytest

from nexpect import (
    MarketModel,
    TimeGrid,
    default_control_family,
    generate_brownian,
    simulate_sde,
    weight_matrix,
)

# Frozen oracle values, computed from the closed-form lognormal expectation
# E[(S_T - K)+] = s0 e^{mT} N(d1) - K N(d2) and cross-checked by quadrature
# of the lognormal density.  Market: s0 = K = 100, sigma = 0.2, T = 1.
CALL_ATM_DRIFT_UP = 9.096153179328205  # drift +0.02 (= +k*sigma, k = 0.1)
CALL_ATM_DRIFT_DOWN = 6.93590460924807  # drift -0.02
CALL_ATM_FLAT = 7.965567455405804  # drift 0
PUT_ATM_DRIFT_UP = 7.076019176652636
PUT_ATM_DRIFT_DOWN = 8.916037278572539
DIGITAL_ATM_DRIFT_UP = 0.5  # P(S_T > 100) at drift +0.02 is N(0) exactly
MEAN_ST_MU5 = 105.12710963760242  # E[S_T] = 100 e^{0.05}
MEAN_ST_DRIFT_UP = 102.02013400267558  # E[S_T] = 100 e^{0.02}
L2_BOUND_ST = 102.53151205244286  # sqrt(E[S_T^2]) e^{k^2 T / 2} at mu = 0, k = 0.1


@pytest.fixture(scope="session")
def acc_model() -> MarketModel:
    return MarketModel.gbm(100.0, 0.0, 0.2, k=0.1)


@pytest.fixture(scope="session")
def grid8() -> TimeGrid:
    return TimeGrid(1.0, 8)


@pytest.fixture(scope="session")
def bundle_200k(acc_model, grid8):
    return simulate_sde(acc_model, generate_brownian(grid8, 200_000, 1234))


@pytest.fixture(scope="session")
def bundle_50k(acc_model, grid8):
    return simulate_sde(acc_model, generate_brownian(grid8, 50_000, 99))


@pytest.fixture(scope="session")
def family_k01():
    return default_control_family(0.1)


@pytest.fixture(scope="session")
def weights_200k(family_k01, bundle_200k) -> np.ndarray:
    return weight_matrix(family_k01, bundle_200k)


@pytest.fixture(scope="session")
def weights_50k(family_k01, bundle_50k) -> np.ndarray:
    return weight_matrix(family_k01, bundle_50k)
