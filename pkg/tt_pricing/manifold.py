"""
Riemannian geometry of fixed-rank tensor trains.

A point ``X`` of rank ``r`` is kept in two gauges at once,

    X = L_1 ... L_{d-1} S_d = S_1 R_2 ... R_d

with left-orthogonal ``L_j`` and right-orthogonal ``R_j``. Tangent vectors are
stored by their gauged core variations

    dX = sum_k L_1 ... L_{k-1} dU_k R_{k+1} ... R_d,    L_k^T dU_k = 0 (k < d)

so that the embedded inner product is the sum of core inner products.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .constants import (
    ARMIJO_C1,
    ARMIJO_CONTRACTION,
    ARMIJO_MAX_BACKTRACKS,
    CG_GRADIENT_TOLERANCE,
    CG_INITIAL_STEP,
    CG_MAX_ITERATIONS,
    CG_PATIENCE,
    CG_RESTART_PERIOD,
    CG_STAGNATION_TOLERANCE,
)
from .exceptions import NumericalError, ValidationError
from .interfaces import SmoothObjective
from .tensor_train import (
    Orthogonality,
    Side,
    TensorTrain,
    orthogonalize,
    pad_ranks,
    truncate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankOneTerms:
    """
    A block of rank-1 terms ``sum_t w_t f_1^t ⊗ ... ⊗ f_d^t``.

    Factor arrays have shape (T, p_j), or (1, p_j) for a factor shared by all
    terms of the block.
    """

    weights: np.ndarray
    factors: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        factors = tuple(np.atleast_2d(np.asarray(f, dtype=float)) for f in self.factors)
        count = weights.shape[0]
        for j, f in enumerate(factors):
            if f.ndim != 2 or f.shape[0] not in (1, count):
                raise ValidationError(
                    f"Factor {j} has shape {f.shape}, expected ({count}, p) or (1, p)"
                )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "factors", factors)

    @property
    def count(self) -> int:
        return int(self.weights.shape[0])

    @property
    def mode_dims(self) -> Tuple[int, ...]:
        return tuple(f.shape[1] for f in self.factors)

    def to_tt(self) -> TensorTrain:
        """Exact tensor train of rank ``count`` (for small problems and tests)."""
        count = self.count
        factors = [np.broadcast_to(f, (count, f.shape[1])) for f in self.factors]
        order = len(factors)
        if order == 1:
            return TensorTrain(((self.weights @ factors[0]).reshape(1, -1, 1),))
        cores = [(self.weights[:, None] * factors[0]).T[None, :, :]]
        for f in factors[1:-1]:
            core = np.zeros((count, f.shape[1], count))
            idx = np.arange(count)
            core[idx, :, idx] = f
            cores.append(core)
        cores.append(factors[-1][:, :, None])
        return TensorTrain(tuple(cores))


Euclidean = Union[TensorTrain, RankOneTerms, Iterable[RankOneTerms]]


def feasible_ranks(mode_dims: Sequence[int], ranks: Union[int, Sequence[int]]) -> Tuple[int, ...]:
    """
    Clip a rank request to ranks a tensor train of these dimensions can have.

    Args:
        mode_dims: Mode dimensions
        ranks: Interior rank (int), d-1 interior ranks or the full tuple r_0..r_d

    Returns:
        Full rank tuple with ``r_k <= r_{k-1} p_k`` and ``r_k <= p_{k+1} r_{k+1}``
    """
    order = len(mode_dims)
    if isinstance(ranks, (int, np.integer)):
        interior = [int(ranks)] * (order - 1)
    else:
        interior = [int(r) for r in ranks]
        if len(interior) == order + 1:
            interior = interior[1:-1]
    if len(interior) != order - 1:
        raise ValidationError(f"Expected {order - 1} interior ranks, got {len(interior)}")
    full = [1] + interior + [1]
    for k in range(1, order):
        full[k] = max(1, min(full[k], full[k - 1] * mode_dims[k - 1]))
    for k in range(order - 1, 0, -1):
        full[k] = min(full[k], mode_dims[k] * full[k + 1])
    return tuple(full)


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """A point of the fixed-rank manifold with cached left and right gauges."""

    left_cores: Tuple[np.ndarray, ...]
    right_cores: Tuple[np.ndarray, ...]

    @classmethod
    def from_tt(
        cls, x: TensorTrain, ranks: Union[None, int, Sequence[int]] = None
    ) -> "ManifoldPoint":
        """
        Build a manifold point of the requested rank.

        Higher ranks are truncated away, lower ranks are zero padded so that the
        gauges keep the requested shape.
        """
        target = feasible_ranks(x.mode_dims, x.ranks if ranks is None else ranks)
        if any(cur > tgt for cur, tgt in zip(x.ranks, target)):
            x = truncate(x, 0.0, target).tt
        if x.ranks != target:
            logger.debug(f"Padding ranks {x.ranks} to {target}")
            x = pad_ranks(x, target)
        left = orthogonalize(x, x.order - 1, Side.LEFT)
        right = orthogonalize(left, 0, Side.RIGHT)
        return cls(left.cores, right.cores)

    @property
    def order(self) -> int:
        return len(self.left_cores)

    @property
    def mode_dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.left_cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return (1,) + tuple(core.shape[2] for core in self.left_cores)

    @property
    def tt(self) -> TensorTrain:
        """The point as a left-orthogonal tensor train."""
        return TensorTrain(self.left_cores, Orthogonality(Side.LEFT, self.order - 1))

    def full(self) -> np.ndarray:
        return self.tt.full()


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector at ``base`` stored by its gauged core variations."""

    base: ManifoldPoint
    d_cores: Tuple[np.ndarray, ...] = field(repr=False)

    def _check_base(self, other: "TangentVector") -> None:
        if other.base is not self.base:
            raise ValidationError("Tangent vectors live at different base points")

    def __add__(self, other: "TangentVector") -> "TangentVector":
        self._check_base(other)
        return TangentVector(self.base, tuple(a + b for a, b in zip(self.d_cores, other.d_cores)))

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        return self + (-1.0) * other

    def __mul__(self, c: float) -> "TangentVector":
        return TangentVector(self.base, tuple(c * a for a in self.d_cores))

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return (-1.0) * self

    def inner(self, other: "TangentVector") -> float:
        """Embedded Frobenius inner product."""
        self._check_base(other)
        return float(sum(np.vdot(a, b) for a, b in zip(self.d_cores, other.d_cores)))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def embed(self) -> TensorTrain:
        """The tangent vector as a tensor train of rank at most 2r."""
        return _embed(self.base, self.d_cores, np.zeros_like(self.d_cores[-1]))

    def gauge_residual(self) -> float:
        """Largest violation of the gauge conditions ``L_k^T dU_k = 0``."""
        worst = 0.0
        for lk, dk in zip(self.base.left_cores[:-1], self.d_cores[:-1]):
            left, p, right = lk.shape
            gram = lk.reshape(left * p, right).T @ dk.reshape(left * p, right)
            worst = max(worst, float(np.max(np.abs(gram))))
        return worst


def _embed(point: ManifoldPoint, d_cores: Sequence[np.ndarray], last: np.ndarray) -> TensorTrain:
    """
    Tensor train of ``sum_k L_<k dU_k R_>k + L_<d last``.

    ``last`` is added to the final variation; passing the base point's last
    left core embeds ``X + dX``.
    """
    order = point.order
    lefts, rights = point.left_cores, point.right_cores
    if order == 1:
        return TensorTrain((d_cores[0] + last,))
    cores = [np.concatenate([d_cores[0], lefts[0]], axis=2)]
    for k in range(1, order - 1):
        left, p, right = lefts[k].shape
        core = np.zeros((2 * left, p, 2 * right))
        core[:left, :, :right] = rights[k]
        core[left:, :, :right] = d_cores[k]
        core[left:, :, right:] = lefts[k]
        cores.append(core)
    cores.append(np.concatenate([rights[-1], d_cores[-1] + last], axis=0))
    return TensorTrain(tuple(cores))


def _gauge(point: ManifoldPoint, d_cores: List[np.ndarray]) -> Tuple[np.ndarray, ...]:
    """Project the first d-1 variations onto the gauge ``L_k^T dU_k = 0``."""
    for k, lk in enumerate(point.left_cores[:-1]):
        left, p, right = lk.shape
        q = lk.reshape(left * p, right)
        d = d_cores[k].reshape(left * p, right)
        d_cores[k] = (d - q @ (q.T @ d)).reshape(left, p, right)
    return tuple(d_cores)


def _project_tt(point: ManifoldPoint, z: TensorTrain) -> List[np.ndarray]:
    """Ungauged core variations of the projection of a tensor train."""
    order = point.order
    lefts, rights = point.left_cores, point.right_cores
    left_env = [np.ones((1, 1))]
    for k in range(order - 1):
        env = np.tensordot(left_env[-1], lefts[k], axes=([0], [0]))
        left_env.append(np.tensordot(env, z.cores[k], axes=([0, 1], [0, 1])))
    right_env = [np.ones((1, 1))] * (order + 1)
    for k in range(order - 1, 0, -1):
        env = np.tensordot(rights[k], right_env[k + 1], axes=([2], [0]))
        right_env[k] = np.tensordot(env, z.cores[k], axes=([1, 2], [1, 2]))
    d_cores = []
    for k in range(order):
        core = np.tensordot(left_env[k], z.cores[k], axes=([1], [0]))
        d_cores.append(np.tensordot(core, right_env[k + 1], axes=([2], [1])))
    return d_cores


def _factor_mats(cores: Sequence[np.ndarray], factors: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Per-term core slices ``sum_n f[t, n] G[:, n, :]`` of shape (T or 1, r, r')."""
    mats = []
    for core, f in zip(cores, factors):
        left, p, right = core.shape
        mats.append((f @ core.transpose(1, 0, 2).reshape(p, left * right)).reshape(-1, left, right))
    return mats


def _project_terms(point: ManifoldPoint, terms: RankOneTerms, d_cores: List[np.ndarray]) -> None:
    """Accumulate the ungauged projection of a rank-1 block into ``d_cores``."""
    order = point.order
    count = terms.count
    left_mats = _factor_mats(point.left_cores, terms.factors)
    right_mats = _factor_mats(point.right_cores, terms.factors)
    left_vecs = [np.ones((1, 1, 1))]
    for k in range(order - 1):
        left_vecs.append(left_vecs[-1] @ left_mats[k])
    right_vecs = [np.ones((1, 1, 1))] * (order + 1)
    for k in range(order - 1, 0, -1):
        right_vecs[k] = right_mats[k] @ right_vecs[k + 1]
    for k in range(order):
        lv = np.broadcast_to(left_vecs[k][:, 0, :], (count, left_vecs[k].shape[2]))
        rv = np.broadcast_to(right_vecs[k + 1][:, :, 0], (count, right_vecs[k + 1].shape[1]))
        f = np.broadcast_to(terms.factors[k], (count, terms.factors[k].shape[1]))
        d_cores[k] += np.einsum(
            "ta,tn,tb->anb", terms.weights[:, None] * lv, f, rv, optimize=True
        )


def project_to_tangent(point: ManifoldPoint, z: Euclidean) -> TangentVector:
    """
    Orthogonal projection onto the tangent space at ``point``.

    Args:
        point: Base point
        z: A tensor train, a block of rank-1 terms, or an iterable of blocks;
            blocks are projected without forming a high-rank tensor train

    Returns:
        The projected tangent vector

    Raises:
        ValidationError: If the mode dimensions do not match
    """
    if isinstance(z, TensorTrain):
        if z.mode_dims != point.mode_dims:
            raise ValidationError(f"Mode dimensions differ: {z.mode_dims} vs {point.mode_dims}")
        return TangentVector(point, _gauge(point, _project_tt(point, z)))

    blocks = [z] if isinstance(z, RankOneTerms) else z
    d_cores = [np.zeros(core.shape) for core in point.left_cores]
    for block in blocks:
        if block.mode_dims != point.mode_dims:
            raise ValidationError(
                f"Mode dimensions differ: {block.mode_dims} vs {point.mode_dims}"
            )
        _project_terms(point, block, d_cores)
    return TangentVector(point, _gauge(point, d_cores))


def retract(point: ManifoldPoint, v: TangentVector, step: float) -> ManifoldPoint:
    """
    Retraction by TT-SVD rounding of ``X + step * v`` back to the ranks of ``X``.
    """
    if v.base is not point:
        raise ValidationError("Tangent vector is not based at the given point")
    y = _embed(point, [step * c for c in v.d_cores], point.left_cores[-1])
    return ManifoldPoint.from_tt(truncate(y, 0.0, point.ranks).tt, point.ranks)


def transport(point: ManifoldPoint, v: TangentVector) -> TangentVector:
    """Vector transport by projection onto the tangent space at ``point``."""
    if v.base is point:
        return v
    return project_to_tangent(point, v.embed())


@dataclass(frozen=True)
class CGOptions:
    """Options of the Riemannian conjugate gradient driver."""

    max_iterations: int = CG_MAX_ITERATIONS
    gradient_tolerance: float = CG_GRADIENT_TOLERANCE
    patience: int = CG_PATIENCE
    stagnation_tolerance: float = CG_STAGNATION_TOLERANCE
    restart_period: int = CG_RESTART_PERIOD
    initial_step: float = CG_INITIAL_STEP
    armijo_c1: float = ARMIJO_C1
    contraction: float = ARMIJO_CONTRACTION
    max_backtracks: int = ARMIJO_MAX_BACKTRACKS


@dataclass
class CGTraceRow:
    """One row of the optimization trace."""

    iteration: int
    objective: float
    validation_objective: float
    gradient_norm: float
    step_size: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "objective": self.objective,
            "validation_objective": self.validation_objective,
            "gradient_norm": self.gradient_norm,
            "step_size": self.step_size,
        }


@dataclass
class CGResult:
    """Outcome of ``riemannian_cg``."""

    point: ManifoldPoint
    objective: float
    validation_objective: float
    best_iteration: int
    iterations: int
    status: str
    trace: List[CGTraceRow]


def fr_pr_plus(
    grad_new: TangentVector, grad_old: TangentVector, grad_old_norm_sq: float
) -> float:
    """
    Hybrid Fletcher-Reeves / Polak-Ribiere coefficient clipped at zero.

    Args:
        grad_new: New Riemannian gradient
        grad_old: Previous gradient transported to the new point
        grad_old_norm_sq: Squared norm of the previous gradient

    Returns:
        ``max(0, min(beta_PR, beta_FR))``
    """
    if grad_old_norm_sq <= 0.0:
        return 0.0
    beta_fr = grad_new.inner(grad_new) / grad_old_norm_sq
    beta_pr = grad_new.inner(grad_new - grad_old) / grad_old_norm_sq
    return max(0.0, min(beta_pr, beta_fr))


def _require_finite(value: float, what: str, trace: List[CGTraceRow]) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"Non-finite {what} ({value}) after {len(trace)} trace rows", trace)
    return float(value)


def _quadratic_step(f: float, slope: float, trial: float, f_trial: float) -> Optional[float]:
    """Minimizer of the parabola through (0, f) with slope ``slope`` and (trial, f_trial)."""
    curvature = (f_trial - f - slope * trial) / trial**2
    if not np.isfinite(curvature) or curvature <= 0.0:
        return None
    step = -slope / (2.0 * curvature)
    if not np.isfinite(step) or np.isclose(step, trial):
        return None
    return float(step)


def riemannian_cg(
    objective: SmoothObjective,
    x0: ManifoldPoint,
    options: Optional[CGOptions] = None,
    validation: Optional[Callable[[TensorTrain], float]] = None,
) -> CGResult:
    """
    Nonlinear conjugate gradient on the fixed-rank manifold.

    Directions follow the FR-PR+ rule with transported previous directions,
    steps come from Armijo backtracking along the retraction, refined by one
    quadratic interpolation when that lowers the objective further. The returned
    point is the iterate with the lowest validation objective when
    ``validation`` is given, else the lowest training objective.

    Raises:
        NumericalError: If the objective or gradient becomes non-finite
    """
    opts = options or CGOptions()
    trace: List[CGTraceRow] = []

    x = x0
    f = _require_finite(objective.value(x.tt), "objective", trace)
    grad = project_to_tangent(x, objective.euclidean_gradient(x.tt))
    gnorm = _require_finite(grad.norm(), "gradient norm", trace)
    monitor = validation(x.tt) if validation is not None else f
    trace.append(CGTraceRow(0, f, monitor, gnorm, 0.0))

    best_point, best_f, best_monitor, best_iteration = x, f, monitor, 0
    stalled = 0
    direction = -grad
    step = opts.initial_step / 2.0
    status = "max_iterations"
    iteration = 0

    for iteration in range(1, opts.max_iterations + 1):
        if gnorm <= opts.gradient_tolerance:
            status = "gradient_tolerance"
            iteration -= 1
            break

        slope = grad.inner(direction)
        if slope >= 0.0:
            logger.debug(f"Iteration {iteration}: non-descent direction, restarting")
            direction = -grad
            slope = -gnorm**2

        accepted = None
        trial = 2.0 * step
        for _ in range(opts.max_backtracks + 1):
            candidate = retract(x, direction, trial)
            f_candidate = objective.value(candidate.tt)
            if np.isfinite(f_candidate) and f_candidate <= f + opts.armijo_c1 * trial * slope:
                accepted = (candidate, float(f_candidate))
                break
            trial *= opts.contraction
        if accepted is None:
            status = "line_search_failed"
            iteration -= 1
            break

        x_new, f_new = accepted
        refined = _quadratic_step(f, slope, trial, f_new)
        if refined is not None:
            candidate = retract(x, direction, refined)
            f_candidate = objective.value(candidate.tt)
            if (
                np.isfinite(f_candidate)
                and f_candidate < f_new
                and f_candidate <= f + opts.armijo_c1 * refined * slope
            ):
                x_new, f_new, trial = candidate, float(f_candidate), refined
        step = trial
        grad_new = project_to_tangent(x_new, objective.euclidean_gradient(x_new.tt))
        gnorm_new = _require_finite(grad_new.norm(), "gradient norm", trace)

        gamma = 0.0
        if iteration % opts.restart_period != 0:
            gamma = fr_pr_plus(grad_new, transport(x_new, grad), gnorm**2)
        if gamma > 0.0:
            direction = -grad_new + gamma * transport(x_new, direction)
        else:
            direction = -grad_new
        x, f, grad, gnorm = x_new, f_new, grad_new, gnorm_new
        monitor = validation(x.tt) if validation is not None else f
        trace.append(CGTraceRow(iteration, f, monitor, gnorm, step))
        logger.debug(
            f"CG {iteration}: f={f:.8g} monitor={monitor:.8g} |grad|={gnorm:.3e} step={step:.3e}"
        )

        improved = monitor < best_monitor - opts.stagnation_tolerance * abs(best_monitor)
        if monitor < best_monitor:
            best_point, best_f, best_monitor, best_iteration = x, f, monitor, iteration
        stalled = 0 if improved else stalled + 1
        if stalled >= opts.patience:
            status = "stagnation"
            break

    logger.info(
        f"Riemannian CG stopped ({status}) after {iteration} iterations; "
        f"best iteration {best_iteration} with monitored value {best_monitor:.8g}"
    )
    return CGResult(
        point=best_point,
        objective=best_f,
        validation_objective=best_monitor,
        best_iteration=best_iteration,
        iterations=iteration,
        status=status,
        trace=trace,
    )


def write_trace_csv(path: Union[str, Path], trace: Sequence[CGTraceRow]) -> Path:
    """Write an optimization trace as CSV (iteration, objective, validation, gradient, step)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([row.to_dict() for row in trace]).to_csv(path, index=False)
    return path
