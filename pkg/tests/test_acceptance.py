"""
End-to-end pricing checks against published reference prices.

These runs use desk-scale sample sizes and take minutes; they are marked
``slow`` and only run with ``price check --full``.
"""

import math
from dataclasses import replace
from pathlib import Path

import pytest

from tt_pricing.config import load_config
from tt_pricing.experiment import ExperimentRunner
from tt_pricing.market import european_put_price

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def run_config(name, output_dir, **overrides):
    config = replace(load_config(CONFIG_DIR / name), **overrides)
    rows = ExperimentRunner(config, output_dir=output_dir).run()
    return {row.method: row for row in rows}


def combined_stderr(*rows):
    return math.sqrt(sum(row.stderr**2 for row in rows))


@pytest.fixture(scope="module")
def basket_put_rows(tmp_path_factory):
    return run_config("table1_putbasket_p2_N4.cfg", tmp_path_factory.mktemp("table1"))


@pytest.fixture(scope="module")
def max_call_rows(tmp_path_factory):
    output_dir = tmp_path_factory.mktemp("table4")
    return run_config("table4_maxcall_sweep.cfg", output_dir, degrees=(3,), dims=())


def test_european_put(tmp_path):
    row = run_config("european_put.cfg", tmp_path)["primal"]
    reference = european_put_price(100.0, 100.0, 0.05, 0.0, 0.2, 1.0)
    assert abs(row.price - reference) <= 3 * row.stderr
    assert row.stderr < 0.02


class TestBasketPut:
    def test_primal_lower_bound(self, basket_put_rows):
        row = basket_put_rows["primal"]
        assert 2.05 <= row.price <= 2.23
        assert row.max_rank <= 6

    def test_dual_upper_bound(self, basket_put_rows):
        lower, upper = basket_put_rows["primal"], basket_put_rows["dual"]
        assert 2.25 <= upper.price <= 2.50
        assert upper.price >= lower.price - 3 * combined_stderr(lower, upper)


class TestMaxCall:
    def test_primal_two_assets(self, max_call_rows):
        row = max_call_rows["primal"]
        assert 13.60 <= row.price <= 13.95
        assert row.price <= 13.902 + 3 * row.stderr
        assert row.max_rank <= 6

    def test_sorted_five_assets(self, tmp_path):
        sorted_row = run_config(
            "table5_maxcall_sorted.cfg", tmp_path / "sorted", degrees=(3,), dims=()
        )["primal"]
        plain_row = run_config(
            "table5_maxcall_sorted.cfg", tmp_path / "plain", degrees=(3,), dims=(), sorted=False
        )["primal"]
        assert 25.80 <= sorted_row.price <= 26.20
        assert sorted_row.price >= plain_row.price - 2 * combined_stderr(sorted_row, plain_row)
        assert sorted_row.max_rank <= 6

    def test_dual_out_of_the_money(self, tmp_path):
        rows = run_config("table3_maxcall_dual.cfg", tmp_path)
        lower, upper = rows["primal"], rows["dual"]
        assert 8.6 <= upper.price <= 9.1
        assert upper.price >= lower.price - 3 * combined_stderr(lower, upper)


def test_hundred_assets_rank_one(tmp_path):
    row = run_config("scaling_d100.cfg", tmp_path)["primal"]
    assert 82.0 <= row.price <= 84.5
    assert row.max_rank == 1
