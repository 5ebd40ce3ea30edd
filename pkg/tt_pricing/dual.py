"""
Dual martingale upper bounds with chaos-expanded martingales in tensor-train format.

A square-integrable functional of the Gaussian increments G_1..G_N is
expanded as

    X = sum_alpha X_alpha prod_n H_{alpha_n}(G_n)

with one mode per increment and a total-degree multi-index set per mode.
Its conditional expectations ``M_n = E[X | G_1..G_n]`` are obtained by
contracting the trailing modes with the constant polynomial. The upper bound

    (1/m) sum_i max_n (Z_n^i - (M_n^i - M_0))

is minimized over X of fixed TT rank with Riemannian conjugate gradients on a
smoothed maximum.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .bases import MultiIndexSet, build_multi_index_set, chaos_feature
from .constants import (
    DUAL_MIN_SAMPLES,
    DUAL_NOISE_SCALE,
    DUAL_RANK,
    DUAL_SHARPNESS,
    DUAL_VALIDATION_RATIO,
    MAX_FEATURE_ENTRIES,
    SIMULATION_BLOCK_SIZE,
)
from .exceptions import ValidationError
from .interfaces import SmoothObjective
from .manifold import (
    CGOptions,
    ManifoldPoint,
    RankOneTerms,
    feasible_ranks,
    project_to_tangent,
    riemannian_cg,
)
from .market import PathEnsemble
from .models import DualResult
from .tensor_train import (
    TensorTrain,
    pad_modes,
    pad_ranks,
    random_tt,
    truncate,
    unit_tt,
    zeros_tt,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ChaosCoefficients:
    """Chaos coefficient tensor with one mode per Gaussian increment."""

    tt: TensorTrain
    index_set: MultiIndexSet

    def __post_init__(self) -> None:
        size = len(self.index_set)
        if any(p != size for p in self.tt.mode_dims):
            raise ValidationError(
                f"Mode dimensions {self.tt.mode_dims} do not match the index set size {size}"
            )

    @property
    def num_steps(self) -> int:
        return self.tt.order

    @property
    def degree(self) -> int:
        return self.index_set.degree

    @property
    def rank(self) -> int:
        return max(self.tt.ranks)

    @property
    def constant_term(self) -> float:
        """Coefficient of the all-zeros multi-index, i.e. the mean of X."""
        vec = np.ones(1)
        for core in self.tt.cores:
            vec = vec @ core[:, 0, :]
        return float(vec[0])


@dataclass(frozen=True)
class SmoothMaxParams:
    """Sharpness of the Boltzmann soft maximum; ``inf`` selects the hard maximum."""

    sharpness: float = DUAL_SHARPNESS

    def __post_init__(self) -> None:
        if not self.sharpness > 0:
            raise ValidationError(f"Sharpness must be positive, got {self.sharpness}")


@dataclass(frozen=True, eq=False)
class DualSamples:
    """Chaos features (m, N, K) and discounted payoffs (m, N+1) of a path sample."""

    features: np.ndarray
    payoffs: np.ndarray

    def __post_init__(self) -> None:
        if self.features.ndim != 3 or self.payoffs.ndim != 2:
            raise ValidationError("Features must be (m, N, K) and payoffs (m, N+1)")
        m, steps, _ = self.features.shape
        if self.payoffs.shape != (m, steps + 1):
            raise ValidationError(
                f"Payoffs of shape {self.payoffs.shape} do not match features {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("Chaos features must be finite")

    @classmethod
    def from_ensemble(
        cls,
        ensemble: PathEnsemble,
        index_set: MultiIndexSet,
        rows: Optional[np.ndarray] = None,
    ) -> "DualSamples":
        """
        Compute chaos features of (a subset of) an ensemble.

        Raises:
            ValidationError: If the ensemble has no increments or the features
                exceed the cache guard
        """
        if ensemble.increments is None:
            raise ValidationError("The dual method needs an ensemble with increments")
        increments = ensemble.increments if rows is None else ensemble.increments[rows]
        payoffs = ensemble.discounted_payoffs if rows is None else ensemble.discounted_payoffs[rows]
        entries = increments.shape[0] * increments.shape[1] * len(index_set)
        if entries > MAX_FEATURE_ENTRIES:
            raise ValidationError(
                f"Chaos features would hold {entries} entries, "
                f"above the guard of {MAX_FEATURE_ENTRIES}"
            )
        return cls(chaos_feature(index_set, increments), payoffs)

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0])


def conditional_evaluate(x: ChaosCoefficients, feats: np.ndarray, n: int) -> float:
    """
    Conditional expectation of X given the first ``n`` increments for one sample.

    Args:
        x: Chaos coefficients
        feats: Features of one sample, shape (N, K)
        n: Number of observed increments, 0 <= n <= N

    Raises:
        ValidationError: On shape mismatch or an invalid n
    """
    feats = np.asarray(feats, dtype=float)
    if feats.shape != (x.num_steps, len(x.index_set)):
        raise ValidationError(
            f"Features of shape {feats.shape}, expected {(x.num_steps, len(x.index_set))}"
        )
    if not 0 <= n <= x.num_steps:
        raise ValidationError(f"Date index {n} outside 0..{x.num_steps}")
    vec = np.ones(1)
    for j, core in enumerate(x.tt.cores):
        vec = vec @ (np.tensordot(feats[j], core, axes=([0], [1])) if j < n else core[:, 0, :])
    return float(vec[0])


def _martingale_block(cores: Sequence[np.ndarray], feats: np.ndarray) -> np.ndarray:
    steps = len(cores)
    suffix = [np.ones(1)] * (steps + 1)
    for j in range(steps - 1, -1, -1):
        suffix[j] = cores[j][:, 0, :] @ suffix[j + 1]
    out = np.empty((feats.shape[0], steps + 1))
    prefix = np.ones((feats.shape[0], 1))
    out[:, 0] = prefix @ suffix[0]
    for j, core in enumerate(cores):
        left, p, right = core.shape
        slices = (feats[:, j, :] @ core.transpose(1, 0, 2).reshape(p, left * right))
        prefix = np.einsum("ia,iab->ib", prefix, slices.reshape(-1, left, right))
        out[:, j + 1] = prefix @ suffix[j + 1]
    return out


def martingale_values(x: TensorTrain, feats: np.ndarray, workers: int = 1) -> np.ndarray:
    """
    Conditional expectations ``M_n`` for all samples and n = 0..N.

    Prefix contractions with the features are combined with suffix
    contractions with the constant polynomial.

    Args:
        x: Chaos coefficients as a tensor train
        feats: Features (m, N, K)
        workers: Threads over sample blocks

    Returns:
        Array of shape (m, N+1)
    """
    if feats.ndim != 3 or feats.shape[1] != x.order or feats.shape[2] != x.mode_dims[0]:
        raise ValidationError(f"Features of shape {feats.shape} do not match {x}")
    m = feats.shape[0]
    if workers <= 1 or m <= SIMULATION_BLOCK_SIZE:
        return _martingale_block(x.cores, feats)
    starts = range(0, m, SIMULATION_BLOCK_SIZE)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        blocks = pool.map(
            lambda s: _martingale_block(x.cores, feats[s : s + SIMULATION_BLOCK_SIZE]), starts
        )
        return np.concatenate(list(blocks), axis=0)


def project_zero_mean(
    x: ChaosCoefficients, max_rank: Optional[int] = None
) -> ChaosCoefficients:
    """
    Remove the constant term: ``x - <x, E_0> E_0``.

    The exact result has ranks at most r + 1; ``max_rank`` rounds it back.
    """
    order = x.num_steps
    e0 = unit_tt(x.tt.mode_dims, (0,) * order)
    projected = x.tt - x.constant_term * e0
    if max_rank is not None:
        projected = truncate(projected, 0.0, max_rank).tt
    return ChaosCoefficients(projected, x.index_set)


def smooth_max(
    v: np.ndarray, sharpness: float = DUAL_SHARPNESS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Boltzmann soft maximum along the last axis.

    Args:
        v: Values (..., N)
        sharpness: Sharpness eta; ``inf`` gives the hard maximum

    Returns:
        ``(value, weights)`` with ``value = sum_k w_k v_k`` and
        ``w = softmax(eta v)``; the hard maximum puts all weight on the first argmax
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValidationError("smooth_max needs finite values")
    if math.isinf(sharpness):
        weights = np.zeros_like(v)
        np.put_along_axis(weights, np.argmax(v, axis=-1)[..., None], 1.0, axis=-1)
        return np.max(v, axis=-1), weights
    weights = softmax(sharpness * v, axis=-1)
    return np.sum(weights * v, axis=-1), weights


def smooth_max_derivative(
    v: np.ndarray, sharpness: float = DUAL_SHARPNESS
) -> Tuple[np.ndarray, np.ndarray]:
    """Soft maximum and its derivative ``w_k (1 + eta (v_k - value))``."""
    value, weights = smooth_max(v, sharpness)
    if math.isinf(sharpness):
        return value, weights
    return value, weights * (1.0 + sharpness * (v - np.expand_dims(value, -1)))


def _pathwise_values(x: TensorTrain, samples: DualSamples, workers: int = 1) -> np.ndarray:
    """``Z_n - (M_n - M_0)`` for every sample and date."""
    martingale = martingale_values(x, samples.features, workers)
    return samples.payoffs - (martingale - martingale[:, :1])


def dual_objective(
    x: ChaosCoefficients,
    samples: DualSamples,
    sharpness: float = DUAL_SHARPNESS,
) -> float:
    """
    Mean over samples of the (soft) maximum of ``Z_n - M_n`` with the
    constant term of x projected out.
    """
    value, _ = smooth_max(_pathwise_values(x.tt, samples), sharpness)
    return float(np.mean(value))


def _gradient_terms(
    x: TensorTrain, samples: DualSamples, sharpness: float, workers: int = 1
) -> List[RankOneTerms]:
    values = _pathwise_values(x, samples, workers)
    _, derivative = smooth_max_derivative(values, sharpness)
    m, steps, size = samples.features.shape
    e0 = np.zeros((1, size))
    e0[0, 0] = 1.0
    # Derivative weights sum to one per sample: the projected constant adds +E_0.
    terms = [
        RankOneTerms(
            np.array([1.0 - float(np.mean(derivative[:, 0]))]),
            tuple(e0 for _ in range(steps)),
        )
    ]
    for n in range(1, steps + 1):
        factors = tuple(samples.features[:, j, :] if j < n else e0 for j in range(steps))
        terms.append(RankOneTerms(-derivative[:, n] / m, factors))
    return terms


def dual_gradient(
    x: ChaosCoefficients,
    samples: DualSamples,
    sharpness: float = DUAL_SHARPNESS,
    point: Optional[ManifoldPoint] = None,
):
    """
    Euclidean gradient of ``dual_objective`` as rank-1 term blocks, and its
    Riemannian projection when a manifold point is given.

    Returns:
        ``(terms, tangent)`` with ``tangent`` None when ``point`` is None
    """
    terms = _gradient_terms(x.tt, samples, sharpness)
    tangent = project_to_tangent(point, terms) if point is not None else None
    return terms, tangent


class DualObjective(SmoothObjective):
    """Smoothed dual objective on a fixed sample as a manifold objective."""

    def __init__(self, samples: DualSamples, sharpness: float = DUAL_SHARPNESS, workers: int = 1):
        self.samples = samples
        self.sharpness = sharpness
        self.workers = workers

    def value(self, x: TensorTrain) -> float:
        value, _ = smooth_max(_pathwise_values(x, self.samples, self.workers), self.sharpness)
        return float(np.mean(value))

    def euclidean_gradient(self, x: TensorTrain) -> List[RankOneTerms]:
        return _gradient_terms(x, self.samples, self.sharpness, self.workers)


def hard_max_objective(x: TensorTrain, samples: DualSamples, workers: int = 1) -> float:
    """Mean pathwise hard maximum, the quantity reported as the upper bound."""
    return float(np.mean(np.max(_pathwise_values(x, samples, workers), axis=1)))


@dataclass(frozen=True)
class DualOptions:
    """Options of the dual optimization."""

    rank: int = DUAL_RANK
    sharpness: float = DUAL_SHARPNESS
    validation_ratio: float = DUAL_VALIDATION_RATIO
    noise_scale: float = DUAL_NOISE_SCALE
    seed: int = 0
    """Seed of the rank-inflation noise."""
    cg: CGOptions = field(default_factory=CGOptions)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValidationError(f"Dual rank must be at least 1, got {self.rank}")
        SmoothMaxParams(self.sharpness)


def _inflate(
    x: TensorTrain, ranks: Tuple[int, ...], scale: float, rng: np.random.Generator
) -> TensorTrain:
    """Bring ``x`` to ``ranks`` by zero padding plus Gaussian noise of relative size ``scale``."""
    if any(a > b for a, b in zip(x.ranks, ranks)):
        x = truncate(x, 0.0, ranks).tt
    x = pad_ranks(x, ranks)
    noise = random_tt(x.mode_dims, ranks, rng)
    size = x.norm()
    amplitude = scale * (size if size > 0.0 else 1.0) / max(noise.norm(), np.finfo(float).tiny)
    return truncate(x + amplitude * noise, 0.0, ranks).tt


def optimize_dual(
    ensemble: PathEnsemble,
    degree: int,
    options: Optional[DualOptions] = None,
    fresh: Optional[PathEnsemble] = None,
) -> DualResult:
    """
    Minimize the dual upper bound by degree continuation.

    For p = 1..degree the optimum of degree p-1 is zero padded to the larger
    index set, inflated to the target rank and optimized by Riemannian CG on
    the smoothed objective; the iterate with the lowest hard-max validation
    objective is kept.

    Args:
        ensemble: Training paths with increments; the last ninth (by default)
            of the paths is held out for validation
        degree: Target total degree p
        options: Dual options
        fresh: Independent paths for the high-biased estimate, if wanted

    Returns:
        The optimized coefficients, traces and optional re-simulated price

    Raises:
        ValidationError: On too few samples or missing increments
        NumericalError: If the optimization produces non-finite values
    """
    opts = options or DualOptions()
    if degree < 0:
        raise ValidationError(f"Degree must be nonnegative, got {degree}")
    m = ensemble.num_paths
    if m < DUAL_MIN_SAMPLES:
        raise ValidationError(f"The dual method needs at least {DUAL_MIN_SAMPLES} paths, got {m}")
    if ensemble.increments is None:
        raise ValidationError("The dual method needs an ensemble with increments")

    n_valid = max(1, int(round(m * opts.validation_ratio / (1.0 + opts.validation_ratio))))
    train_rows = np.arange(m - n_valid)
    valid_rows = np.arange(m - n_valid, m)
    steps, dimension = ensemble.num_steps, ensemble.dimension
    rng = np.random.default_rng([opts.seed, steps, dimension])

    index_set = build_multi_index_set(dimension, 0)
    x = zeros_tt((1,) * steps)
    traces = []
    train = DualSamples.from_ensemble(ensemble, index_set, train_rows)
    valid = DualSamples.from_ensemble(ensemble, index_set, valid_rows)
    train_value = float(np.mean(np.max(train.payoffs, axis=1)))
    valid_value = hard_max_objective(x, valid)

    for p in range(1, degree + 1):
        index_set = build_multi_index_set(dimension, p)
        dims = (len(index_set),) * steps
        ranks = feasible_ranks(dims, opts.rank)
        x = _inflate(pad_modes(x, dims), ranks, opts.noise_scale, rng)
        train = DualSamples.from_ensemble(ensemble, index_set, train_rows)
        valid = DualSamples.from_ensemble(ensemble, index_set, valid_rows)
        objective = DualObjective(train, opts.sharpness, opts.workers)
        result = riemannian_cg(
            objective,
            ManifoldPoint.from_tt(x, ranks),
            opts.cg,
            validation=lambda tt: hard_max_objective(tt, valid, opts.workers),
        )
        x = result.point.tt
        traces.append(result.trace)
        train_value = result.objective
        valid_value = result.validation_objective
        logger.info(
            f"Degree {p}: |Lambda|={len(index_set)}, ranks {x.ranks}, "
            f"smoothed objective {train_value:.6f}, validation bound {valid_value:.6f} "
            f"({result.status} after {result.iterations} iterations)"
        )

    coefficients = project_zero_mean(ChaosCoefficients(x, index_set))
    dual = DualResult(
        coefficients=coefficients,
        degree=degree,
        rank=opts.rank,
        sharpness=opts.sharpness,
        train_objective=train_value,
        validation_objective=valid_value,
        traces=traces,
        num_train=train_rows.size,
        num_valid=valid_rows.size,
        seed=ensemble.seed,
    )
    if fresh is not None:
        dual.upper_price, dual.upper_stderr = resimulate_upper(
            coefficients, fresh, training_seed=ensemble.seed, workers=opts.workers
        )
        dual.resim_seed = fresh.seed
    return dual


def resimulate_upper(
    x: ChaosCoefficients,
    fresh: PathEnsemble,
    sharpness: float = math.inf,
    training_seed: Optional[int] = None,
    workers: int = 1,
) -> Tuple[float, float]:
    """
    High-biased price from fresh paths, hard maximum by default.

    Features are computed block by block so that memory stays bounded.

    Returns:
        Mean pathwise maximum and its standard error

    Raises:
        ValidationError: On a seed collision or too few paths
    """
    if training_seed is not None and fresh.seed == training_seed:
        raise ValidationError(f"Re-simulation seed {fresh.seed} equals the training seed")
    if fresh.num_paths < 2:
        raise ValidationError("Re-simulation needs at least two paths")
    if fresh.num_steps != x.num_steps:
        raise ValidationError(
            f"Fresh paths have {fresh.num_steps} steps, coefficients {x.num_steps}"
        )
    values = np.empty(fresh.num_paths)
    for start in range(0, fresh.num_paths, SIMULATION_BLOCK_SIZE):
        rows = np.arange(start, min(start + SIMULATION_BLOCK_SIZE, fresh.num_paths))
        block = DualSamples.from_ensemble(fresh, x.index_set, rows)
        values[rows], _ = smooth_max(_pathwise_values(x.tt, block, workers), sharpness)
    price = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size))
    logger.info(f"High-biased price {price:.6f} +- {stderr:.6f} on {values.size} paths")
    return price, stderr
