"""
Longstaff-Schwartz regression with tensor-train value functions.

The continuation value at each exercise date is modelled as

    v(x) = sum_alpha V_alpha prod_k B_{alpha_k}(x_k) + c_phi * phi(x)

with ``V`` a tensor train over an H²-orthonormal polynomial basis and
``phi`` the payoff. ``V`` and ``c_phi`` are fitted jointly by alternating
least squares; TT ranks start at 1 and grow one bond at a time while the
validation error keeps improving.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .bases import IntervalBasis, build_interval_basis
from .constants import (
    ALS_CONDITION_WARNING,
    ALS_MAX_SWEEPS,
    ALS_RIDGE_FACTOR,
    ALS_STOP_TOLERANCE,
    PRIMAL_MAX_RANK,
    PRIMAL_VALIDATION_RATIO,
    SVD_RELATIVE_CUTOFF,
)
from .exceptions import ValidationError
from .interfaces import ContinuationEstimate, Payoff
from .manifold import feasible_ranks
from .market import PathEnsemble, sort_paths
from .models import FitRecord, LSResult
from .tensor_train import TensorTrain, evaluate_batch, random_tt

logger = logging.getLogger(__name__)


def domain_bounds(ensemble: PathEnsemble) -> Tuple[float, float]:
    """
    Smallest and largest asset price over all paths, dates and assets.

    Raises:
        ValidationError: If the ensemble is empty or all prices coincide
    """
    if ensemble.paths.size == 0:
        raise ValidationError("Cannot compute bounds of an empty ensemble")
    a = float(np.min(ensemble.paths))
    b = float(np.max(ensemble.paths))
    if not a < b:
        raise ValidationError(f"Degenerate price domain [{a}, {b}]")
    return a, b


@dataclass(frozen=True, eq=False)
class ValueFunctional(ContinuationEstimate):
    """Tensor-train polynomial plus a multiple of the payoff."""

    tt: TensorTrain
    payoff_coefficient: float
    basis: IntervalBasis
    payoff: Payoff

    def features(self, states: np.ndarray) -> List[np.ndarray]:
        """Basis values per asset, each of shape (m, p)."""
        values = self.basis.evaluate(states)
        return [values[:, k, :] for k in range(values.shape[1])]

    def __call__(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape[1] != self.tt.order:
            raise ValidationError(
                f"States have {states.shape[1]} assets, value function expects {self.tt.order}"
            )
        polynomial = evaluate_batch(self.tt, self.features(states))
        return polynomial + self.payoff_coefficient * self.payoff(states)


class NeverExercise(ContinuationEstimate):
    """Infinite continuation value, used at dates without in-the-money paths."""

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(states).shape[0], np.inf)

    def __repr__(self) -> str:
        return "NeverExercise()"


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    """Sample states, targets and a disjoint train/validation split."""

    states: np.ndarray
    targets: np.ndarray
    train: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if states.shape[0] != targets.shape[0]:
            raise ValidationError(
                f"{states.shape[0]} states but {targets.shape[0]} targets"
            )
        if not np.all(np.isfinite(targets)):
            raise ValidationError("Regression targets must be finite")
        if len(self.train) == 0:
            raise ValidationError("Regression needs at least one training sample")
        if np.intersect1d(self.train, self.valid).size:
            raise ValidationError("Training and validation indices overlap")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def split(
        cls,
        states: np.ndarray,
        targets: np.ndarray,
        ratio: float = PRIMAL_VALIDATION_RATIO,
        rng: Optional[np.random.Generator] = None,
    ) -> "RegressionProblem":
        """
        Split samples so that the validation set is ``ratio`` times the training set.

        Args:
            states: Sample states (n, d)
            targets: Targets (n,)
            ratio: Validation size relative to the training size
            rng: Generator for the permutation; None keeps the sample order
        """
        n = len(targets)
        n_valid = int(round(n * ratio / (1.0 + ratio)))
        if n - n_valid < 1:
            n_valid = 0
        order = rng.permutation(n) if rng is not None else np.arange(n)
        return cls(states, targets, np.sort(order[n_valid:]), np.sort(order[:n_valid]))


@dataclass(frozen=True)
class ALSOptions:
    """Options of the rank-adaptive alternating least squares fit."""

    max_rank: int = PRIMAL_MAX_RANK
    adaptive: bool = True
    tolerance: float = ALS_STOP_TOLERANCE
    max_sweeps: int = ALS_MAX_SWEEPS
    ridge: float = ALS_RIDGE_FACTOR
    seed: int = 0
    """Seed of the random start used by the fixed-rank mode."""

    def __post_init__(self) -> None:
        if self.max_rank < 1:
            raise ValidationError(f"max_rank must be at least 1, got {self.max_rank}")
        if self.max_sweeps < 1:
            raise ValidationError(f"max_sweeps must be at least 1, got {self.max_sweeps}")


def _slices(core: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Per-sample matrices ``sum_nu f[i, nu] core[:, nu, :]``, shape (n, r, r')."""
    left, p, right = core.shape
    return (feats @ core.transpose(1, 0, 2).reshape(p, left * right)).reshape(-1, left, right)


def _left_qr(core: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    left, p, right = core.shape
    q, r = scipy.linalg.qr(core.reshape(left * p, right), mode="economic")
    return q.reshape(left, p, q.shape[1]), r


def _right_qr(core: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    left, p, right = core.shape
    q, r = scipy.linalg.qr(core.reshape(left, p * right).T, mode="economic")
    return q.T.reshape(q.shape[1], p, right), r.T


def _rmse(residual: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residual**2))) if residual.size else math.nan


class ALSRegression:
    """
    Fit of one value functional by rank-adaptive ALS.

    Each micro-step solves the ridge-regularized normal equations of the model
    that is linear in one core and ``c_phi``; the gauge is moved by QR so that
    the remaining cores stay orthogonal.
    """

    def __init__(
        self,
        problem: RegressionProblem,
        basis: IntervalBasis,
        payoff: Payoff,
        options: Optional[ALSOptions] = None,
        date_index: int = 0,
    ):
        self.options = options or ALSOptions()
        self.basis = basis
        self.payoff = payoff
        self.date_index = date_index
        values = basis.evaluate(problem.states)
        phi = payoff(problem.states)
        order = problem.states.shape[1]
        self._feats = [values[problem.train, k, :] for k in range(order)]
        self._feats_valid = [values[problem.valid, k, :] for k in range(order)]
        self._phi = phi[problem.train]
        self._phi_valid = phi[problem.valid]
        self._y = problem.targets[problem.train]
        self._y_valid = problem.targets[problem.valid]
        self.mode_dims = (basis.size,) * order
        self.rank_cap = feasible_ranks(self.mode_dims, self.options.max_rank)
        self.micro_objectives: List[float] = []
        self.record = FitRecord(
            date_index=date_index,
            num_samples=problem.targets.size,
            num_train=self._y.size,
            num_valid=self._y_valid.size,
        )
        self._max_condition = 0.0

    @property
    def order(self) -> int:
        return len(self.mode_dims)

    def _initial_cores(self) -> List[np.ndarray]:
        if self.options.adaptive or max(self.rank_cap) == 1:
            cores = []
            for p in self.mode_dims:
                core = np.zeros((1, p, 1))
                core[0, 0, 0] = 1.0
                cores.append(core)
            return cores
        rng = np.random.default_rng([self.options.seed, self.date_index])
        return list(random_tt(self.mode_dims, self.rank_cap, rng).cores)

    def _right_interfaces(self, cores: Sequence[np.ndarray]) -> List[np.ndarray]:
        n = self._y.size
        rights = [np.ones((n, 1))] * self.order
        for k in range(self.order - 1, 0, -1):
            rights[k - 1] = np.einsum("iab,ib->ia", _slices(cores[k], self._feats[k]), rights[k])
        return rights

    def _solve(
        self, cores: List[np.ndarray], k: int, left: np.ndarray, right: np.ndarray
    ) -> float:
        """Solve for core ``k`` and ``c_phi``; returns the new payoff coefficient."""
        n = self._y.size
        a, p, b = cores[k].shape
        design = np.einsum("ia,in,ib->ianb", left, self._feats[k], right).reshape(n, a * p * b)
        design = np.hstack([design, self._phi[:, None]])
        gram = design.T @ design
        cols = gram.shape[0]
        gram[np.diag_indices(cols)] += self.options.ridge * np.trace(gram) / cols
        rhs = design.T @ self._y
        self._max_condition = max(self._max_condition, float(np.linalg.cond(gram)))
        try:
            solution = scipy.linalg.solve(gram, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            logger.warning(
                f"Date {self.date_index}: singular micro-system for core {k}, using least squares"
            )
            solution = scipy.linalg.lstsq(design, self._y)[0]
        cores[k] = solution[:-1].reshape(a, p, b)
        self.micro_objectives.append(_rmse(design @ solution - self._y))
        return float(solution[-1])

    def _sweep(
        self, cores: List[np.ndarray], c: float, rights: List[np.ndarray]
    ) -> float:
        """
        One forward-backward sweep starting and ending with the pivot at core 0.

        ``cores`` must be right-orthogonal from core 1 on, with ``rights``
        the matching interfaces; both are updated in place.
        """
        n = self._y.size
        lefts = [np.ones((n, 1))] * self.order
        for k in range(self.order):
            c = self._solve(cores, k, lefts[k], rights[k])
            if k < self.order - 1:
                cores[k], r = _left_qr(cores[k])
                cores[k + 1] = np.tensordot(r, cores[k + 1], axes=([1], [0]))
                lefts[k + 1] = np.einsum("ia,iab->ib", lefts[k], _slices(cores[k], self._feats[k]))
        for k in range(self.order - 1, 0, -1):
            cores[k], r = _right_qr(cores[k])
            cores[k - 1] = np.tensordot(cores[k - 1], r, axes=([2], [0]))
            rights[k - 1] = np.einsum("iab,ib->ia", _slices(cores[k], self._feats[k]), rights[k])
            c = self._solve(cores, k - 1, lefts[k - 1], rights[k - 1])
        return c

    def _right_orthogonalize(self, cores: List[np.ndarray]) -> None:
        for k in range(self.order - 1, 0, -1):
            cores[k], r = _right_qr(cores[k])
            cores[k - 1] = np.tensordot(cores[k - 1], r, axes=([2], [0]))

    def _predict(self, cores: Sequence[np.ndarray], c: float, valid: bool) -> np.ndarray:
        feats = self._feats_valid if valid else self._feats
        phi = self._phi_valid if valid else self._phi
        return evaluate_batch(TensorTrain(tuple(cores)), feats) + c * phi

    def _validation_rmse(self, cores: Sequence[np.ndarray], c: float) -> float:
        if self._y_valid.size == 0:
            return _rmse(self._predict(cores, c, valid=False) - self._y)
        return _rmse(self._predict(cores, c, valid=True) - self._y_valid)

    def _converge(
        self, cores: List[np.ndarray], c: float
    ) -> Tuple[List[np.ndarray], float, float]:
        """Sweep at fixed ranks until the validation error stalls."""
        cores = list(cores)
        self._right_orthogonalize(cores)
        rights = self._right_interfaces(cores)
        previous = math.inf
        error = math.inf
        for sweep in range(1, self.options.max_sweeps + 1):
            c = self._sweep(cores, c, rights)
            error = self._validation_rmse(cores, c)
            self.record.sweeps += 1
            logger.debug(
                f"Date {self.date_index}: sweep {sweep} ranks "
                f"{(1,) + tuple(core.shape[2] for core in cores)} validation RMSE {error:.6g}"
            )
            if math.isfinite(previous) and previous - error <= self.options.tolerance * previous:
                break
            previous = error
        return cores, c, error

    def _grow(
        self, cores: List[np.ndarray], c: float
    ) -> Optional[List[np.ndarray]]:
        """
        Add one rank at the bond with the largest new residual-gradient direction.

        The score of bond j is the top singular value of the residual gradient
        with respect to the supercore of cores j and j+1, projected orthogonally
        to the current column space of core j. The new column of core j is the
        corresponding singular vector and the new row of core j+1 is zero, so
        the represented function does not change.
        """
        cores = list(cores)
        self._right_orthogonalize(cores)
        rights = self._right_interfaces(cores)
        residual = (self._y - self._predict(cores, c, valid=False)) / self._y.size
        scale = _rmse(self._y) + np.finfo(float).tiny
        left = np.ones((self._y.size, 1))
        best: Optional[Tuple[float, int, np.ndarray]] = None
        for j in range(self.order - 1):
            cores[j], r = _left_qr(cores[j])
            cores[j + 1] = np.tensordot(r, cores[j + 1], axes=([1], [0]))
            a, p, rank = cores[j].shape
            _, p_next, b = cores[j + 1].shape
            if rank < min(self.rank_cap[j + 1], a * p, p_next * b):
                grad = np.einsum(
                    "i,ia,in,im,ib->anmb",
                    residual,
                    left,
                    self._feats[j],
                    self._feats[j + 1],
                    rights[j + 1],
                    optimize=True,
                ).reshape(a * p, p_next * b)
                q = cores[j].reshape(a * p, rank)
                grad = grad - q @ (q.T @ grad)
                u, s, _ = scipy.linalg.svd(grad, full_matrices=False)
                if best is None or s[0] > best[0]:
                    best = (float(s[0]), j, u[:, 0])
            left = np.einsum("ia,iab->ib", left, _slices(cores[j], self._feats[j]))

        if best is None or best[0] <= SVD_RELATIVE_CUTOFF * scale:
            return None
        score, j, column = best
        a, p, rank = cores[j].shape
        cores[j] = np.concatenate([cores[j], column.reshape(a, p, 1)], axis=2)
        cores[j + 1] = np.concatenate(
            [cores[j + 1], np.zeros((1,) + cores[j + 1].shape[1:])], axis=0
        )
        logger.debug(
            f"Date {self.date_index}: growing bond {j + 1} to rank {rank + 1} (score {score:.3e})"
        )
        return cores

    def fit(self) -> ValueFunctional:
        """Run the fit and return the value functional; ``record`` is filled in."""
        cores, c, error = self._converge(self._initial_cores(), 0.0)
        while self.options.adaptive:
            grown = self._grow(cores, c)
            if grown is None:
                break
            new_cores, new_c, new_error = self._converge(grown, c)
            if not new_error < error * (1.0 - self.options.tolerance):
                logger.debug(
                    f"Date {self.date_index}: rank increase rejected "
                    f"({new_error:.6g} vs {error:.6g})"
                )
                break
            cores, c, error = new_cores, new_c, new_error
            self.record.rank_increases += 1

        tt = TensorTrain(tuple(cores))
        self.record.ranks = tt.ranks
        self.record.train_rmse = _rmse(self._predict(cores, c, valid=False) - self._y)
        self.record.valid_rmse = error
        self.record.max_condition = self._max_condition
        self.record.payoff_coefficient = c
        if self._max_condition > ALS_CONDITION_WARNING:
            logger.warning(
                f"Date {self.date_index}: micro-system condition number "
                f"{self._max_condition:.3e} exceeds {ALS_CONDITION_WARNING:.0e}"
            )
        return ValueFunctional(tt, c, self.basis, self.payoff)


def fit_value_function(
    problem: RegressionProblem,
    basis: IntervalBasis,
    payoff: Payoff,
    options: Optional[ALSOptions] = None,
) -> ValueFunctional:
    """
    Fit a value functional to regression data by rank-adaptive ALS.

    Args:
        problem: Samples with train/validation split
        basis: Univariate basis shared by all assets
        payoff: Payoff added as an extra regressor
        options: ALS options

    Returns:
        The fitted value functional
    """
    return ALSRegression(problem, basis, payoff, options).fit()


@dataclass(frozen=True)
class LSOptions:
    """Options of the Longstaff-Schwartz regression."""

    sorted: bool = False
    validation_ratio: float = PRIMAL_VALIDATION_RATIO
    als: ALSOptions = field(default_factory=ALSOptions)
    seed: int = 0
    """Seed of the train/validation permutations."""


def longstaff_schwartz(
    ensemble: PathEnsemble,
    payoff: Payoff,
    p: int,
    options: Optional[LSOptions] = None,
    fresh: Optional[PathEnsemble] = None,
) -> LSResult:
    """
    Backward induction over the exercise dates with TT regressions.

    Args:
        ensemble: Training paths
        payoff: Exercise payoff
        p: Number of univariate basis functions
        options: Regression options
        fresh: Independent paths for the low-biased estimate, if wanted

    Returns:
        Fitted continuation values, in-sample price and optional low-biased price

    Raises:
        ValidationError: On invalid arguments
    """
    opts = options or LSOptions()
    if p < 1:
        raise ValidationError(f"Basis size must be at least 1, got {p}")
    if opts.sorted:
        if not payoff.is_symmetric:
            raise ValidationError("Sorting the assets requires a symmetric payoff")
        ensemble = sort_paths(ensemble)
    started = time.perf_counter()
    steps = ensemble.num_steps
    discounted = ensemble.discounted_payoffs
    cashflow = discounted[:, steps].copy()
    functionals: List[ContinuationEstimate] = [NeverExercise()] * (steps - 1)
    records: List[FitRecord] = []
    basis: Optional[IntervalBasis] = None
    bounds = (math.nan, math.nan)

    for n in range(steps - 1, 0, -1):
        itm = np.flatnonzero(discounted[:, n] > 0.0)
        if itm.size == 0:
            logger.warning(f"Date {n}: no in-the-money paths, never exercising")
            records.append(FitRecord(date_index=n, num_samples=0, skipped=True))
            continue
        if basis is None:
            bounds = domain_bounds(ensemble)
            basis = build_interval_basis(bounds[0], bounds[1], p)
        states = ensemble.paths[itm, n, :]
        rng = np.random.default_rng([opts.seed, n])
        problem = RegressionProblem.split(states, cashflow[itm], opts.validation_ratio, rng)
        regression = ALSRegression(problem, basis, payoff, opts.als, date_index=n)
        functional = regression.fit()
        records.append(regression.record)
        functionals[n - 1] = functional

        continuation = functional(states)
        exercise = itm[discounted[itm, n] > continuation]
        cashflow[exercise] = discounted[exercise, n]
        logger.info(
            f"Date {n}: {itm.size} ITM paths, ranks {regression.record.ranks}, "
            f"validation RMSE {regression.record.valid_rmse:.4g}, exercised {exercise.size}"
        )

    price = float(np.mean(cashflow))
    result = LSResult(
        functionals=functionals,
        degree=p,
        bounds=bounds,
        in_sample_price=price,
        records=records[::-1],
        sorted=opts.sorted,
        seed=ensemble.seed,
    )
    logger.info(
        f"Longstaff-Schwartz in-sample price {price:.6f} "
        f"({time.perf_counter() - started:.1f}s, max rank {result.max_rank})"
    )
    if fresh is not None:
        result.lower_price, result.lower_stderr = resimulate_lower(
            functionals, fresh, training_seed=ensemble.seed, sort_states=opts.sorted
        )
    return result


def resimulate_lower(
    functionals: Sequence[ContinuationEstimate],
    fresh: PathEnsemble,
    training_seed: Optional[int] = None,
    sort_states: bool = False,
) -> Tuple[float, float]:
    """
    Low-biased price of the stopping rule implied by the continuation values.

    A path stops at the first date n in 1..N-1 with a positive payoff and
    ``Z_n >= v_n(S_n)``, otherwise at maturity.

    Args:
        functionals: Continuation values for dates 1..N-1
        fresh: Paths independent of the training paths
        training_seed: Seed of the training paths, rejected if reused
        sort_states: Whether the continuation values expect sorted states

    Returns:
        Mean discounted exercised payoff and its standard error

    Raises:
        ValidationError: On a seed collision or a date count mismatch
    """
    if training_seed is not None and fresh.seed == training_seed:
        raise ValidationError(
            f"Re-simulation seed {fresh.seed} equals the training seed"
        )
    steps = fresh.num_steps
    if len(functionals) != steps - 1:
        raise ValidationError(
            f"Expected {steps - 1} continuation values, got {len(functionals)}"
        )
    if fresh.num_paths < 2:
        raise ValidationError("Re-simulation needs at least two paths")
    if sort_states:
        fresh = sort_paths(fresh)

    discounted = fresh.discounted_payoffs
    value = discounted[:, steps].copy()
    alive = np.ones(fresh.num_paths, dtype=bool)
    for n in range(1, steps):
        candidates = np.flatnonzero(alive & (discounted[:, n] > 0.0))
        if candidates.size == 0:
            continue
        continuation = functionals[n - 1](fresh.paths[candidates, n, :])
        stop = candidates[discounted[candidates, n] >= continuation]
        value[stop] = discounted[stop, n]
        alive[stop] = False

    price = float(np.mean(value))
    stderr = float(np.std(value, ddof=1) / math.sqrt(value.size))
    logger.info(f"Low-biased price {price:.6f} +- {stderr:.6f} on {value.size} paths")
    return price, stderr
