#!/usr/bin/env python3
"""
Example usage of the tensor-train pricing library.

Prices a two-asset Bermudan max-call from below (Longstaff-Schwartz with
tensor-train regression) and from above (tensor-train chaos martingale).
"""

import logging
import sys

import numpy as np

from tt_pricing import BlackScholesModel, PayoffFactory, longstaff_schwartz, optimize_dual, simulate
from tt_pricing.dual import DualOptions
from tt_pricing.exceptions import PricingError
from tt_pricing.manifold import CGOptions
from tt_pricing.market import exercise_dates


def print_bound(name, price, stderr):
    """Pretty print one price estimate."""
    print(f"{name:<14} {price:8.3f}  (stderr {stderr:.3f})")


def main():
    """Price the example option at a small sample size."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    print("Tensor-train Bermudan pricing - Example")
    print("=" * 60)

    try:
        model = BlackScholesModel(
            d=2, s0=100.0, r=0.05, dividends=0.1, sigma=0.2, rho=0.0, maturity=3.0
        )
        payoff = PayoffFactory().create("max_call", strike=100.0, d=2)
        dates = exercise_dates(model.maturity, 9)

        training = simulate(model, payoff, dates, 20_000, seed=1)
        fresh = simulate(model, payoff, dates, 20_000, seed=2)

        lower = longstaff_schwartz(training, payoff, 3, fresh=fresh)
        print_bound("Lower bound", lower.lower_price, lower.lower_stderr)
        print(f"{'TT ranks':<14} max {lower.max_rank}, mean {lower.mean_rank:.2f}")

        options = DualOptions(rank=3, cg=CGOptions(max_iterations=50), seed=1)
        upper = optimize_dual(training.subset(np.arange(5_000)), 2, options, fresh=fresh)
        print_bound("Upper bound", upper.upper_price, upper.upper_stderr)
        print("\nReference price (published): 13.902")
    except PricingError as e:
        print(f"\nError: {e}")
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
