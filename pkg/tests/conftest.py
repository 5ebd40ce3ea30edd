"""
Shared fixtures for the pricing tests.
"""

import numpy as np
import pytest

from tt_pricing.market import BlackScholesModel, PayoffFactory, exercise_dates, simulate
from tt_pricing.tensor_train import random_tt


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_tt(rng):
    """Random tensor train with dims (3, 4, 3) and ranks (1, 2, 3, 1)."""
    return random_tt((3, 4, 3), (1, 2, 3, 1), rng)


@pytest.fixture
def basket_model():
    return BlackScholesModel(d=2, s0=100.0, r=0.05, dividends=0.0, sigma=0.2, rho=0.0, maturity=1.0)


@pytest.fixture
def basket_put():
    return PayoffFactory().create("basket_put", 100.0, 2)


@pytest.fixture
def basket_ensemble(basket_model, basket_put):
    """4000 paths over three steps, with increments."""
    return simulate(basket_model, basket_put, exercise_dates(1.0, 3), 4000, seed=11)


@pytest.fixture
def fresh_basket_ensemble(basket_model, basket_put):
    return simulate(basket_model, basket_put, exercise_dates(1.0, 3), 4000, seed=12)
