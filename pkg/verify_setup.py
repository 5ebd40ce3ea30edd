#!/usr/bin/env python3
"""
Verify that the tensor-train pricing library is properly set up.
"""

import importlib
import sys

REQUIRED = ["numpy", "scipy", "pandas", "tabulate"]


def check_dependencies():
    """Check that the numerical stack is installed."""
    ok = True
    for name in REQUIRED:
        try:
            module = importlib.import_module(name)
            print(f"✓ {name} is installed (version: {getattr(module, '__version__', 'unknown')})")
        except ImportError:
            print(f"✗ {name} is not installed")
            ok = False
    return ok


def check_package():
    """Check if the tt_pricing package can be imported."""
    try:
        import tt_pricing

        print(f"✓ tt_pricing {tt_pricing.__version__} can be imported")
        return True
    except ImportError as e:
        print(f"✗ Cannot import tt_pricing package: {e}")
        return False


def test_basic_functionality():
    """Price a one-date put and compare with Black-Scholes."""
    try:
        from tt_pricing import BlackScholesModel, PayoffFactory, longstaff_schwartz, simulate
        from tt_pricing.market import european_put_price, exercise_dates

        model = BlackScholesModel(
            d=1, s0=100.0, r=0.05, dividends=0.0, sigma=0.2, rho=0.0, maturity=1.0
        )
        payoff = PayoffFactory().create("basket_put", strike=100.0, d=1)
        dates = exercise_dates(1.0, 1)
        training = simulate(model, payoff, dates, 1000, seed=1, keep_increments=False)
        fresh = simulate(model, payoff, dates, 100_000, seed=2, keep_increments=False)
        result = longstaff_schwartz(training, payoff, 2, fresh=fresh)

        reference = european_put_price(100.0, 100.0, 0.05, 0.0, 0.2, 1.0)
        if abs(result.lower_price - reference) <= 4 * result.lower_stderr:
            print(f"✓ European put {result.lower_price:.3f} matches {reference:.3f}")
            return True
        print(f"✗ European put {result.lower_price:.3f} differs from {reference:.3f}")
        return False
    except Exception as e:
        print(f"✗ Error during basic test: {e}")
        return False


def main():
    """Run all verification checks."""
    print("=" * 80)
    print("Tensor-train pricing - Setup Verification")
    print("=" * 80)
    print()

    checks = [
        ("Dependencies", check_dependencies),
        ("Package Import", check_package),
        ("Basic Functionality", test_basic_functionality),
    ]

    results = []
    for name, check_func in checks:
        print(f"\nChecking {name}...")
        results.append(check_func())

    print("\n" + "=" * 80)
    if all(results):
        print("✓ All checks passed! The library is ready to use.")
        print("\nTry running: python example.py")
        return 0
    else:
        print("✗ Some checks failed. Please fix the issues above.")
        print("\nQuick fix:")
        print("  pip install -e .")
        return 1


if __name__ == "__main__":
    sys.exit(main())
