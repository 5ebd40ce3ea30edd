"""
Tests for the fixed-rank tensor-train manifold and the Riemannian CG driver.
"""

import math

import numpy as np
import pandas as pd
import pytest

from tt_pricing.exceptions import NumericalError, ValidationError
from tt_pricing.interfaces import SmoothObjective
from tt_pricing.manifold import (
    CGOptions,
    ManifoldPoint,
    RankOneTerms,
    feasible_ranks,
    fr_pr_plus,
    project_to_tangent,
    retract,
    riemannian_cg,
    transport,
    write_trace_csv,
)
from tt_pricing.tensor_train import TensorTrain, random_tt


class SquaredDistance(SmoothObjective):
    """f(X) = ||X - A||^2."""

    def __init__(self, target: TensorTrain):
        self.target = target

    def value(self, x):
        return (x - self.target).norm() ** 2

    def euclidean_gradient(self, x):
        return 2.0 * (x - self.target)


class Broken(SmoothObjective):
    def value(self, x):
        return math.nan

    def euclidean_gradient(self, x):
        return x


def _tangent_basis(point):
    """Orthonormal basis of the tangent space from single-entry core variations."""
    cores = point.tt.cores
    columns = []
    for k, core in enumerate(cores):
        for index in np.ndindex(core.shape):
            unit = np.zeros(core.shape)
            unit[index] = 1.0
            varied = list(cores)
            varied[k] = unit
            columns.append(TensorTrain(tuple(varied)).full().ravel())
    u, s, _ = np.linalg.svd(np.array(columns).T, full_matrices=False)
    return u[:, : int(np.sum(s > 1e-10 * s[0]))]


@pytest.fixture
def point(rng):
    return ManifoldPoint.from_tt(random_tt((3, 3, 3), 2, rng))


@pytest.fixture
def tangent(point, rng):
    v = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
    return (1.0 / v.norm()) * v


class TestFeasibleRanks:
    def test_clipped_to_dimensions(self):
        assert feasible_ranks((2, 2, 2), 4) == (1, 2, 2, 1)
        assert feasible_ranks((3, 3, 3), (1, 5, 5, 1)) == (1, 3, 3, 1)

    def test_interior_list(self):
        assert feasible_ranks((4, 4, 4), (2, 3)) == (1, 2, 3, 1)

    def test_wrong_length(self):
        with pytest.raises(ValidationError):
            feasible_ranks((4, 4, 4), (2, 2, 2))


class TestManifoldPoint:
    def test_gauges_reproduce_tensor(self, rng):
        x = random_tt((3, 4, 3), 2, rng)
        point = ManifoldPoint.from_tt(x)
        np.testing.assert_allclose(point.full(), x.full(), atol=1e-12)
        right = TensorTrain(point.right_cores).full()
        np.testing.assert_allclose(right, x.full(), atol=1e-12)
        assert point.ranks == x.ranks

    def test_lower_rank_is_padded(self, rng):
        x = random_tt((3, 3, 3), 1, rng)
        point = ManifoldPoint.from_tt(x, 2)
        assert point.ranks == (1, 2, 2, 1)
        np.testing.assert_allclose(point.full(), x.full(), atol=1e-12)

    def test_higher_rank_is_truncated(self, rng):
        point = ManifoldPoint.from_tt(random_tt((3, 3, 3), 3, rng), 1)
        assert point.ranks == (1, 1, 1, 1)


class TestRankOneTerms:
    def test_to_tt_sums_outer_products(self, rng):
        weights = rng.standard_normal(4)
        factors = tuple(rng.standard_normal((4, p)) for p in (2, 3, 2))
        expected = np.einsum("t,ta,tb,tc->abc", weights, *factors)
        terms = RankOneTerms(weights, factors)
        assert terms.count == 4
        assert terms.mode_dims == (2, 3, 2)
        np.testing.assert_allclose(terms.to_tt().full(), expected, atol=1e-12)

    def test_shared_factor_broadcasts(self, rng):
        weights = rng.standard_normal(3)
        shared = rng.standard_normal((1, 2))
        other = rng.standard_normal((3, 2))
        terms = RankOneTerms(weights, (shared, other))
        expected = np.einsum("t,a,tb->ab", weights, shared[0], other)
        np.testing.assert_allclose(terms.to_tt().full(), expected, atol=1e-12)

    def test_factor_count_mismatch(self, rng):
        with pytest.raises(ValidationError):
            RankOneTerms(np.ones(3), (np.ones((2, 2)), np.ones((3, 2))))


class TestProjection:
    """Tangent-space projection."""

    def test_tangent_is_fixed(self, point, tangent):
        again = project_to_tangent(point, tangent.embed())
        np.testing.assert_allclose(again.embed().full(), tangent.embed().full(), atol=1e-10)

    def test_base_point_is_tangent(self, point):
        projected = project_to_tangent(point, point.tt)
        np.testing.assert_allclose(projected.embed().full(), point.full(), atol=1e-10)

    def test_gauge_conditions(self, tangent):
        assert tangent.gauge_residual() <= 1e-10

    def test_matches_dense_projector_rank_one(self, rng):
        point = ManifoldPoint.from_tt(random_tt((2, 2, 2), 1, rng))
        basis = _tangent_basis(point)
        z = random_tt((2, 2, 2), 2, rng)
        expected = basis @ (basis.T @ z.full().ravel())
        projected = project_to_tangent(point, z).embed().full().ravel()
        np.testing.assert_allclose(projected, expected, atol=1e-10)

    def test_matches_dense_projector(self, point, rng):
        basis = _tangent_basis(point)
        z = random_tt(point.mode_dims, 3, rng)
        expected = basis @ (basis.T @ z.full().ravel())
        projected = project_to_tangent(point, z).embed().full().ravel()
        np.testing.assert_allclose(projected, expected, atol=1e-10)

    def test_residual_orthogonal_to_tangents(self, point, tangent, rng):
        z = random_tt(point.mode_dims, 2, rng)
        residual = z.full() - project_to_tangent(point, z).embed().full()
        assert abs(np.vdot(residual, tangent.embed().full())) <= 1e-10

    def test_self_adjoint(self, point, rng):
        a = random_tt(point.mode_dims, 2, rng)
        b = random_tt(point.mode_dims, 2, rng)
        left = np.vdot(project_to_tangent(point, a).embed().full(), b.full())
        right = np.vdot(a.full(), project_to_tangent(point, b).embed().full())
        assert left == pytest.approx(right, abs=1e-9)

    def test_rank_one_stream_matches_tensor_train(self, point, rng):
        blocks = [
            RankOneTerms(rng.standard_normal(5), [rng.standard_normal((5, 3)) for _ in range(3)]),
            RankOneTerms(
                rng.standard_normal(2),
                [rng.standard_normal((n, 3)) for n in (1, 2, 2)],
            ),
        ]
        streamed = project_to_tangent(point, iter(blocks)).embed().full()
        dense = blocks[0].to_tt() + blocks[1].to_tt()
        expected = project_to_tangent(point, dense).embed().full()
        np.testing.assert_allclose(streamed, expected, atol=1e-10)

    def test_dimension_mismatch(self, point, rng):
        with pytest.raises(ValidationError):
            project_to_tangent(point, random_tt((3, 3, 2), 1, rng))
        with pytest.raises(ValidationError):
            project_to_tangent(point, RankOneTerms(np.ones(1), (np.ones((1, 2)),) * 3))


class TestTangentVector:
    def test_inner_matches_embedding(self, point, rng):
        v = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
        w = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
        dense = np.vdot(v.embed().full(), w.embed().full())
        assert v.inner(w) == pytest.approx(dense, rel=1e-10)

    def test_linear_space(self, point, rng):
        v = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
        w = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
        combined = (2.0 * v - w + (-v)).embed().full()
        np.testing.assert_allclose(combined, v.embed().full() - w.embed().full(), atol=1e-12)

    def test_different_bases_rejected(self, point, rng):
        other = ManifoldPoint.from_tt(random_tt(point.mode_dims, 2, rng))
        v = project_to_tangent(point, point.tt)
        w = project_to_tangent(other, other.tt)
        with pytest.raises(ValidationError):
            v.inner(w)


class TestRetraction:
    def test_zero_step(self, point, tangent):
        np.testing.assert_allclose(retract(point, tangent, 0.0).full(), point.full(), atol=1e-12)

    def test_rank_preserved(self, point, tangent):
        assert retract(point, tangent, 0.1).ranks == point.ranks

    def test_first_order_consistency(self, point, tangent):
        base = point.full()
        direction = tangent.embed().full()

        def error(h):
            return np.linalg.norm(retract(point, tangent, h).full() - (base + h * direction))

        ratio = error(1e-2) / error(5e-3)
        assert 3.5 <= ratio <= 4.5

    def test_foreign_tangent_rejected(self, point, tangent, rng):
        other = ManifoldPoint.from_tt(random_tt(point.mode_dims, 2, rng))
        with pytest.raises(ValidationError):
            retract(other, tangent, 0.1)


class TestTransport:
    def test_same_point_is_identity(self, point, tangent):
        assert transport(point, tangent) is tangent

    def test_non_expansive(self, point, tangent):
        moved = retract(point, tangent, 0.3)
        assert transport(moved, tangent).norm() <= tangent.norm() * (1 + 1e-10)

    def test_equals_projection_of_embedding(self, point, tangent):
        moved = retract(point, tangent, 0.3)
        expected = project_to_tangent(moved, tangent.embed()).embed().full()
        np.testing.assert_allclose(transport(moved, tangent).embed().full(), expected, atol=1e-12)

    def test_matches_dense_projector(self, rng):
        point = ManifoldPoint.from_tt(random_tt((2, 2, 2), 1, rng))
        v = project_to_tangent(point, random_tt((2, 2, 2), 2, rng))
        moved = retract(point, v, 0.5)
        basis = _tangent_basis(moved)
        expected = basis @ (basis.T @ v.embed().full().ravel())
        np.testing.assert_allclose(transport(moved, v).embed().full().ravel(), expected, atol=1e-10)


class TestFrPrPlus:
    def test_negative_polak_ribiere_clips_to_zero(self, tangent):
        assert fr_pr_plus(tangent, 2.0 * tangent, 4.0 * tangent.inner(tangent)) == 0.0

    def test_takes_smaller_coefficient(self, point, rng):
        g = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
        h = project_to_tangent(point, random_tt(point.mode_dims, 2, rng))
        norm_sq = h.inner(h)
        beta_fr = g.inner(g) / norm_sq
        beta_pr = g.inner(g - h) / norm_sq
        assert fr_pr_plus(g, h, norm_sq) == pytest.approx(max(0.0, min(beta_fr, beta_pr)))

    def test_zero_previous_gradient(self, tangent):
        assert fr_pr_plus(tangent, tangent, 0.0) == 0.0


class TestRiemannianCG:
    """Conjugate gradient driver on a quadratic objective."""

    @pytest.fixture
    def target(self, rng):
        return random_tt((3, 3, 3), 2, rng)

    def test_converges_to_target(self, target, rng):
        start = target + 0.3 * random_tt(target.mode_dims, 2, rng)
        result = riemannian_cg(SquaredDistance(target), ManifoldPoint.from_tt(start, target.ranks))
        assert np.linalg.norm(result.point.full() - target.full()) <= 1e-6
        assert result.objective <= result.trace[0].objective

    def test_steepest_descent_converges(self, target, rng):
        start = target + 0.3 * random_tt(target.mode_dims, 2, rng)
        options = CGOptions(restart_period=1)
        result = riemannian_cg(
            SquaredDistance(target), ManifoldPoint.from_tt(start, target.ranks), options
        )
        assert np.linalg.norm(result.point.full() - target.full()) <= 1e-6

    def test_objective_trace_non_increasing(self, target, rng):
        start = ManifoldPoint.from_tt(random_tt(target.mode_dims, 2, rng))
        result = riemannian_cg(SquaredDistance(target), start, CGOptions(max_iterations=30))
        objectives = [row.objective for row in result.trace]
        assert all(b <= a for a, b in zip(objectives, objectives[1:]))

    def test_gradient_matches_finite_differences(self, target, rng):
        objective = SquaredDistance(target)
        point = ManifoldPoint.from_tt(random_tt(target.mode_dims, 2, rng))
        gradient = project_to_tangent(point, objective.euclidean_gradient(point.tt))
        h = 1e-5
        for _ in range(10):
            v = project_to_tangent(point, random_tt(target.mode_dims, 2, rng))
            v = (1.0 / v.norm()) * v
            forward = objective.value(retract(point, v, h).tt)
            backward = objective.value(retract(point, v, -h).tt)
            numeric = (forward - backward) / (2 * h)
            assert numeric == pytest.approx(gradient.inner(v), rel=1e-5, abs=1e-8)

    def test_stationary_start(self, target):
        result = riemannian_cg(SquaredDistance(target), ManifoldPoint.from_tt(target))
        assert result.status == "gradient_tolerance"
        assert result.iterations == 0
        assert len(result.trace) == 1

    def test_returns_best_validation_iterate(self, target, rng):
        start = ManifoldPoint.from_tt(random_tt(target.mode_dims, 2, rng))
        other = random_tt(target.mode_dims, 2, rng)
        result = riemannian_cg(
            SquaredDistance(target),
            start,
            CGOptions(max_iterations=15),
            validation=lambda x: (x - other).norm(),
        )
        monitored = [row.validation_objective for row in result.trace]
        assert result.validation_objective == min(monitored)
        assert result.trace[result.best_iteration].validation_objective == min(monitored)

    def test_non_finite_objective_aborts(self, target):
        with pytest.raises(NumericalError):
            riemannian_cg(Broken(), ManifoldPoint.from_tt(target))

    def test_trace_csv(self, target, rng, tmp_path):
        start = ManifoldPoint.from_tt(random_tt(target.mode_dims, 2, rng))
        result = riemannian_cg(SquaredDistance(target), start, CGOptions(max_iterations=5))
        path = write_trace_csv(tmp_path / "trace.csv", result.trace)
        frame = pd.read_csv(path)
        assert list(frame.columns) == [
            "iteration",
            "objective",
            "validation_objective",
            "gradient_norm",
            "step_size",
        ]
        assert len(frame) == len(result.trace)
