"""
Tests for checkpoint files.
"""

import json

import numpy as np
import pytest

from tt_pricing.bases import build_interval_basis, build_multi_index_set
from tt_pricing.dual import ChaosCoefficients
from tt_pricing.exceptions import ValidationError
from tt_pricing.models import DualResult
from tt_pricing.primal import ValueFunctional
from tt_pricing.serialization import (
    read_ensemble,
    read_tensor_train,
    read_value_functional,
    write_dual_result,
    write_ensemble,
    write_tensor_train,
    write_value_functional,
)
from tt_pricing.tensor_train import random_tt


class TestTensorTrainFiles:
    def test_roundtrip(self, small_tt, tmp_path):
        path = write_tensor_train(tmp_path / "x.tt", small_tt)
        loaded = read_tensor_train(path)
        assert loaded.ranks == small_tt.ranks
        for a, b in zip(loaded.cores, small_tt.cores):
            np.testing.assert_array_equal(a, b)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.tt"
        path.write_bytes(b"NOTATTFILE" + bytes(32))
        with pytest.raises(ValidationError):
            read_tensor_train(path)

    def test_truncated_file(self, small_tt, tmp_path):
        path = write_tensor_train(tmp_path / "x.tt", small_tt)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValidationError):
            read_tensor_train(path)


class TestValueFunctionalFiles:
    def test_roundtrip(self, basket_put, rng, tmp_path):
        basis = build_interval_basis(60.0, 150.0, 3)
        functional = ValueFunctional(random_tt((3, 3), 2, rng), 0.75, basis, basket_put)
        path = write_value_functional(tmp_path / "v1.bin", functional)
        loaded = read_value_functional(path, basket_put)
        states = rng.uniform(60.0, 150.0, size=(10, 2))
        np.testing.assert_allclose(loaded(states), functional(states), rtol=1e-12)
        assert loaded.payoff_coefficient == 0.75
        assert (loaded.basis.a, loaded.basis.b) == (60.0, 150.0)

    def test_wrong_file_kind(self, small_tt, basket_put, tmp_path):
        path = write_tensor_train(tmp_path / "x.tt", small_tt)
        with pytest.raises(ValidationError):
            read_value_functional(path, basket_put)


class TestEnsembleFiles:
    def test_roundtrip(self, basket_ensemble, basket_model, basket_put, tmp_path):
        path = write_ensemble(tmp_path / "paths.bin", basket_ensemble)
        loaded = read_ensemble(path, basket_put, basket_model.r)
        assert loaded.seed == basket_ensemble.seed
        np.testing.assert_array_equal(loaded.dates, basket_ensemble.dates)
        np.testing.assert_array_equal(loaded.paths, basket_ensemble.paths)
        np.testing.assert_array_equal(loaded.increments, basket_ensemble.increments)
        np.testing.assert_allclose(loaded.discounted_payoffs, basket_ensemble.discounted_payoffs)

    def test_without_increments(self, basket_ensemble, basket_put, tmp_path):
        ensemble = basket_ensemble.subset(np.arange(5))
        stripped = type(ensemble)(
            ensemble.dates, ensemble.paths, None, ensemble.discounted_payoffs, ensemble.seed
        )
        loaded = read_ensemble(write_ensemble(tmp_path / "p.bin", stripped), basket_put, 0.05)
        assert loaded.increments is None
        assert loaded.num_paths == 5


class TestDualResultFiles:
    def test_summary_and_coefficients(self, rng, tmp_path):
        coefficients = ChaosCoefficients(random_tt((3, 3), 2, rng), build_multi_index_set(2, 1))
        result = DualResult(
            coefficients=coefficients,
            degree=1,
            rank=2,
            sharpness=50.0,
            train_objective=4.2,
            validation_objective=4.3,
            upper_price=4.25,
            upper_stderr=0.01,
            seed=1,
            resim_seed=2,
        )
        summary = write_dual_result(tmp_path / "out", result, stem="dual_p1")
        data = json.loads(summary.read_text())
        assert data["price"] == 4.25
        assert data["ranks"] == [1, 2, 1]
        loaded = read_tensor_train(tmp_path / "out" / "dual_p1.tt")
        np.testing.assert_allclose(loaded.full(), coefficients.tt.full())
