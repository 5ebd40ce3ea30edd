"""
Tests for the chaos-martingale dual method.
"""

import math

import numpy as np
import pytest

from tt_pricing.bases import build_multi_index_set, chaos_feature
from tt_pricing.dual import (
    ChaosCoefficients,
    DualObjective,
    DualOptions,
    DualSamples,
    SmoothMaxParams,
    conditional_evaluate,
    dual_gradient,
    dual_objective,
    hard_max_objective,
    martingale_values,
    optimize_dual,
    project_zero_mean,
    resimulate_upper,
    smooth_max,
    smooth_max_derivative,
)
from tt_pricing.exceptions import ValidationError
from tt_pricing.manifold import CGOptions, ManifoldPoint, project_to_tangent, retract
from tt_pricing.market import exercise_dates, simulate
from tt_pricing.tensor_train import pad_modes, random_tt, zeros_tt


def _samples(rng, m, steps, dimension, degree):
    index_set = build_multi_index_set(dimension, degree)
    features = chaos_feature(index_set, rng.standard_normal((m, steps, dimension)))
    payoffs = np.maximum(rng.normal(1.0, 1.0, size=(m, steps + 1)), 0.0)
    return index_set, DualSamples(features, payoffs)


def _dense_martingale(x, feats, n):
    """Sum of X_alpha prod_{j<n} f_j[alpha_j] over alpha with alpha_j = 0 for j >= n."""
    tensor = x.tt.full()
    for j in range(x.num_steps):
        vector = feats[j] if j < n else np.eye(tensor.shape[0])[0]
        tensor = np.tensordot(vector, tensor, axes=([0], [0]))
    return float(tensor)


@pytest.fixture
def coefficients(rng):
    index_set = build_multi_index_set(2, 1)
    return ChaosCoefficients(random_tt((3, 3, 3), 2, rng), index_set)


class TestChaosCoefficients:
    def test_properties(self, coefficients):
        assert coefficients.num_steps == 3
        assert coefficients.degree == 1
        assert coefficients.rank == 2
        assert coefficients.constant_term == pytest.approx(coefficients.tt.full()[0, 0, 0])

    def test_mode_mismatch(self, rng):
        with pytest.raises(ValidationError):
            ChaosCoefficients(random_tt((3, 4, 3), 2, rng), build_multi_index_set(2, 1))


class TestConditionalExpectations:
    """Conditional expectations of the chaos expansion."""

    def test_matches_dense_contraction(self, coefficients, rng):
        feats = chaos_feature(coefficients.index_set, rng.standard_normal((3, 2)))
        for n in range(4):
            expected = _dense_martingale(coefficients, feats, n)
            value = conditional_evaluate(coefficients, feats, n)
            assert value == pytest.approx(expected, rel=1e-12)

    def test_start_is_constant_term(self, coefficients, rng):
        feats = chaos_feature(coefficients.index_set, rng.standard_normal((3, 2)))
        value = conditional_evaluate(coefficients, feats, 0)
        assert value == pytest.approx(coefficients.constant_term)

    def test_invalid_arguments(self, coefficients):
        with pytest.raises(ValidationError):
            conditional_evaluate(coefficients, np.ones((2, 3)), 1)
        with pytest.raises(ValidationError):
            conditional_evaluate(coefficients, np.ones((3, 3)), 4)

    def test_batch_matches_single_sample(self, coefficients, rng):
        feats = chaos_feature(coefficients.index_set, rng.standard_normal((20, 3, 2)))
        values = martingale_values(coefficients.tt, feats)
        assert values.shape == (20, 4)
        expected = [
            [conditional_evaluate(coefficients, feats[i], n) for n in range(4)] for i in range(20)
        ]
        np.testing.assert_allclose(values, expected, rtol=1e-12, atol=1e-14)

    def test_threads_match_serial(self, coefficients, rng):
        feats = chaos_feature(coefficients.index_set, rng.standard_normal((10000, 3, 2)))
        serial = martingale_values(coefficients.tt, feats)
        threaded = martingale_values(coefficients.tt, feats, workers=3)
        np.testing.assert_allclose(threaded, serial, rtol=1e-12, atol=1e-14)

    def test_martingale_property(self, rng):
        index_set = build_multi_index_set(2, 2)
        x = ChaosCoefficients(random_tt((6, 6, 6), 2, rng), index_set)
        feats = chaos_feature(index_set, rng.standard_normal((50000, 3, 2)))
        values = martingale_values(x.tt, feats)
        for n in range(1, 4):
            increments = values[:, n] - values[:, n - 1]
            se = increments.std() / math.sqrt(increments.size)
            assert abs(increments.mean()) <= 4.0 * se

    def test_shape_mismatch(self, coefficients):
        with pytest.raises(ValidationError):
            martingale_values(coefficients.tt, np.ones((5, 2, 3)))


class TestProjectZeroMean:
    def test_removes_constant_only(self, coefficients):
        projected = project_zero_mean(coefficients)
        assert projected.constant_term == pytest.approx(0.0, abs=1e-12)
        difference = coefficients.tt.full() - projected.tt.full()
        expected = np.zeros_like(difference)
        expected[0, 0, 0] = coefficients.constant_term
        np.testing.assert_allclose(difference, expected, atol=1e-12)

    def test_rounded_to_rank(self, coefficients):
        projected = project_zero_mean(coefficients, max_rank=2)
        assert max(projected.tt.ranks) <= 2

    def test_zero_stays_zero(self):
        x = ChaosCoefficients(zeros_tt((3, 3)), build_multi_index_set(2, 1))
        assert project_zero_mean(x).tt.norm() == 0.0


class TestSmoothMax:
    """Boltzmann soft maximum."""

    def test_sandwich(self, rng):
        v = rng.standard_normal((100, 6))
        for sharpness in (1.0, 10.0, 50.0):
            value, weights = smooth_max(v, sharpness)
            gap = v.max(axis=1) - value
            assert np.all(gap >= -1e-12)
            assert np.all(gap <= math.log(6) / sharpness + 1e-12)
            np.testing.assert_allclose(weights.sum(axis=1), 1.0)

    def test_equal_entries(self):
        value, weights = smooth_max(np.full(4, 2.5), 7.0)
        assert value == pytest.approx(2.5)
        np.testing.assert_allclose(weights, 0.25)

    def test_shift_invariance(self, rng):
        v = rng.standard_normal(5)
        assert smooth_max(v + 3.0, 4.0)[0] == pytest.approx(smooth_max(v, 4.0)[0] + 3.0)

    def test_large_values_do_not_overflow(self):
        value, _ = smooth_max(np.array([1e4, 1e4 - 1.0]), 50.0)
        assert np.isfinite(value)
        assert value == pytest.approx(1e4, abs=1e-12 * 1e4)

    def test_hard_maximum(self):
        value, weights = smooth_max(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, 1.0]]), math.inf)
        np.testing.assert_array_equal(value, [3.0, 2.0])
        np.testing.assert_array_equal(weights, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])

    def test_sharp_limit_is_one_hot(self):
        _, weights = smooth_max(np.array([0.5, 0.2, 0.1]), 1e6)
        np.testing.assert_allclose(weights, [1.0, 0.0, 0.0], atol=1e-12)

    def test_derivative(self, rng):
        v = rng.standard_normal(5)
        _, derivative = smooth_max_derivative(v, 5.0)
        h = 1e-6
        for k in range(5):
            step = np.zeros(5)
            step[k] = h
            numeric = (smooth_max(v + step, 5.0)[0] - smooth_max(v - step, 5.0)[0]) / (2 * h)
            assert derivative[k] == pytest.approx(numeric, rel=1e-6, abs=1e-9)
        assert derivative.sum() == pytest.approx(1.0)

    def test_non_finite_input(self):
        with pytest.raises(ValidationError):
            smooth_max(np.array([1.0, np.nan]))

    def test_sharpness_must_be_positive(self):
        with pytest.raises(ValidationError):
            SmoothMaxParams(0.0)


class TestDualObjective:
    def test_zero_martingale(self, rng):
        index_set, samples = _samples(rng, 50, 3, 2, 1)
        x = ChaosCoefficients(zeros_tt((3, 3, 3)), index_set)
        expected = samples.payoffs.max(axis=1).mean()
        assert dual_objective(x, samples, math.inf) == pytest.approx(expected)
        assert hard_max_objective(x.tt, samples) == pytest.approx(expected)

    def test_hard_bounds_smooth(self, rng, coefficients):
        _, samples = _samples(rng, 50, 3, 2, 1)
        assert dual_objective(coefficients, samples, math.inf) >= dual_objective(
            coefficients, samples, 10.0
        )

    def test_hand_expanded(self, rng):
        index_set, samples = _samples(rng, 3, 2, 1, 1)
        x = ChaosCoefficients(random_tt((2, 2), 2, rng), index_set)
        dense = x.tt.full()
        expected = []
        for feats, payoffs in zip(samples.features, samples.payoffs):
            m0 = dense[0, 0]
            m1 = feats[0] @ dense[:, 0]
            m2 = feats[0] @ dense @ feats[1]
            expected.append(max(payoffs[0], payoffs[1] - (m1 - m0), payoffs[2] - (m2 - m0)))
        assert dual_objective(x, samples, math.inf) == pytest.approx(np.mean(expected))

    def test_constant_term_does_not_matter(self, rng, coefficients):
        _, samples = _samples(rng, 30, 3, 2, 1)
        projected = project_zero_mean(coefficients)
        assert dual_objective(projected, samples, 10.0) == pytest.approx(
            dual_objective(coefficients, samples, 10.0)
        )

    def test_samples_shape_checks(self):
        with pytest.raises(ValidationError):
            DualSamples(np.ones((4, 2, 3)), np.ones((4, 2)))
        with pytest.raises(ValidationError):
            DualSamples(np.ones((4, 2)), np.ones((4, 3)))


class TestDualGradient:
    """Gradients of the smoothed objective."""

    @pytest.fixture
    def problem(self, rng):
        index_set, samples = _samples(rng, 40, 3, 2, 1)
        x = ChaosCoefficients(random_tt((3, 3, 3), 2, rng), index_set)
        return x, samples

    def test_euclidean_gradient(self, problem, rng):
        x, samples = problem
        objective = DualObjective(samples, 5.0)
        terms, tangent = dual_gradient(x, samples, 5.0)
        assert tangent is None
        gradient = sum(block.to_tt().full() for block in terms)
        h = 1e-6
        for _ in range(5):
            direction = random_tt(x.tt.mode_dims, 2, rng)
            numeric = (
                objective.value(x.tt + h * direction) - objective.value(x.tt - h * direction)
            ) / (2 * h)
            assert numeric == pytest.approx(np.vdot(gradient, direction.full()), rel=1e-5, abs=1e-8)

    def test_constant_direction_is_flat(self, problem):
        x, samples = problem
        terms, _ = dual_gradient(x, samples, 5.0)
        gradient = sum(block.to_tt().full() for block in terms)
        assert gradient[0, 0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_riemannian_gradient(self, problem, rng):
        x, samples = problem
        objective = DualObjective(samples, 5.0)
        point = ManifoldPoint.from_tt(x.tt)
        at_point = ChaosCoefficients(point.tt, x.index_set)
        terms, tangent = dual_gradient(at_point, samples, 5.0, point)
        combined = terms[0].to_tt()
        for block in terms[1:]:
            combined = combined + block.to_tt()
        expected = project_to_tangent(point, combined).embed().full()
        np.testing.assert_allclose(tangent.embed().full(), expected, atol=1e-10)
        h = 1e-5
        for _ in range(5):
            v = project_to_tangent(point, random_tt(x.tt.mode_dims, 2, rng))
            v = (1.0 / v.norm()) * v
            numeric = (
                objective.value(retract(point, v, h).tt) - objective.value(retract(point, v, -h).tt)
            ) / (2 * h)
            assert numeric == pytest.approx(tangent.inner(v), rel=1e-5, abs=1e-8)


class TestOptimizeDual:
    """Degree continuation with Riemannian CG."""

    def test_degree_zero(self, basket_ensemble):
        result = optimize_dual(basket_ensemble, 0)
        assert result.coefficients.tt.norm() == 0.0
        assert result.traces == []
        valid = basket_ensemble.discounted_payoffs[result.num_train :]
        assert result.validation_objective == pytest.approx(valid.max(axis=1).mean())
        assert result.num_train + result.num_valid == basket_ensemble.num_paths

    def test_validation_split(self, basket_ensemble):
        result = optimize_dual(basket_ensemble, 0)
        assert result.num_valid == 400

    def test_too_few_paths(self, basket_ensemble):
        with pytest.raises(ValidationError):
            optimize_dual(basket_ensemble.subset(np.arange(5)), 1)

    def test_missing_increments(self, basket_model, basket_put):
        ensemble = simulate(
            basket_model, basket_put, exercise_dates(1.0, 2), 100, seed=1, keep_increments=False
        )
        with pytest.raises(ValidationError):
            optimize_dual(ensemble, 1)

    def test_negative_degree(self, basket_ensemble):
        with pytest.raises(ValidationError):
            optimize_dual(basket_ensemble, -1)

    def test_small_run(self, basket_ensemble, fresh_basket_ensemble):
        options = DualOptions(rank=2, sharpness=20.0, cg=CGOptions(max_iterations=15))
        result = optimize_dual(basket_ensemble, 2, options, fresh=fresh_basket_ensemble)
        valid = basket_ensemble.discounted_payoffs[result.num_train :]
        assert result.coefficients.constant_term == pytest.approx(0.0, abs=1e-10)
        assert result.coefficients.degree == 2
        assert len(result.traces) == 2
        assert result.validation_objective <= valid.max(axis=1).mean() + 1e-4
        assert result.resim_seed == fresh_basket_ensemble.seed
        assert result.upper_stderr > 0
        assert np.isfinite(result.upper_price)

    def test_invalid_options(self):
        with pytest.raises(ValidationError):
            DualOptions(rank=0)
        with pytest.raises(ValidationError):
            DualOptions(sharpness=-1.0)


class TestDegreeNesting:
    def test_padding_preserves_martingale(self, rng):
        low = build_multi_index_set(2, 1)
        high = build_multi_index_set(2, 2)
        g = rng.standard_normal((30, 3, 2))
        x = random_tt((3, 3, 3), 2, rng)
        padded = pad_modes(x, (6, 6, 6))
        np.testing.assert_allclose(
            martingale_values(padded, chaos_feature(high, g)),
            martingale_values(x, chaos_feature(low, g)),
            rtol=1e-12,
            atol=1e-14,
        )


class TestResimulateUpper:
    def test_equals_hard_max_objective(self, fresh_basket_ensemble, rng):
        index_set = build_multi_index_set(2, 1)
        x = ChaosCoefficients(random_tt((3, 3, 3), 2, rng), index_set)
        price, stderr = resimulate_upper(x, fresh_basket_ensemble)
        samples = DualSamples.from_ensemble(fresh_basket_ensemble, index_set)
        assert price == pytest.approx(hard_max_objective(x.tt, samples))
        assert stderr > 0

    def test_zero_martingale_gives_max_payoff(self, fresh_basket_ensemble):
        x = ChaosCoefficients(zeros_tt((1, 1, 1)), build_multi_index_set(2, 0))
        price, _ = resimulate_upper(x, fresh_basket_ensemble)
        expected = fresh_basket_ensemble.discounted_payoffs.max(axis=1).mean()
        assert price == pytest.approx(expected)

    def test_errors(self, coefficients, fresh_basket_ensemble, basket_ensemble):
        with pytest.raises(ValidationError):
            resimulate_upper(coefficients, fresh_basket_ensemble, training_seed=12)
        with pytest.raises(ValidationError):
            resimulate_upper(coefficients, fresh_basket_ensemble.subset(np.array([3])))
        two_steps = ChaosCoefficients(zeros_tt((3, 3)), build_multi_index_set(2, 1))
        with pytest.raises(ValidationError):
            resimulate_upper(two_steps, basket_ensemble)

