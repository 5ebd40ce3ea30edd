"""
Tensor-train format and its linear algebra.

A tensor ``U`` of shape ``(p_1, ..., p_d)`` is stored as a chain of cores
``G_j`` of shape ``(r_{j-1}, p_j, r_j)`` with ``r_0 = r_d = 1`` and

    U[nu_1, ..., nu_d] = G_1[:, nu_1, :] @ G_2[:, nu_2, :] @ ... @ G_d[:, nu_d, :]

Mode indices are 0-based. Dense tensors are plain numpy arrays whose entries are
enumerated in row-major (C) order over ``(nu_1, ..., nu_d)``; every dense oracle
and every contraction in this package uses that order.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .constants import MAX_DENSE_ENTRIES, SVD_RELATIVE_CUTOFF
from .exceptions import TensorSizeError, ValidationError

logger = logging.getLogger(__name__)

DenseTensor = np.ndarray
RankCap = Union[None, int, Sequence[int]]


class Side(str, Enum):
    """Direction of an orthogonalization sweep."""

    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Orthogonality:
    """
    Orthogonality state of a tensor train.

    ``Orthogonality(LEFT, k)`` means cores ``0..k-1`` are left-orthogonal,
    ``Orthogonality(RIGHT, k)`` means cores ``k+1..d-1`` are right-orthogonal.
    """

    side: Side
    pivot: int


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """Immutable tensor train given by its chain of order-3 cores."""

    cores: Tuple[np.ndarray, ...]
    orthogonality: Optional[Orthogonality] = None

    def __post_init__(self) -> None:
        cores = tuple(np.array(core, dtype=float) for core in self.cores)
        _validate_cores(cores)
        for core in cores:
            core.flags.writeable = False
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        """Number of modes d."""
        return len(self.cores)

    @property
    def mode_dims(self) -> Tuple[int, ...]:
        """Mode dimensions (p_1, ..., p_d)."""
        return tuple(core.shape[1] for core in self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        """TT ranks (r_0, ..., r_d)."""
        return (1,) + tuple(core.shape[2] for core in self.cores)

    @property
    def num_parameters(self) -> int:
        """Total number of core entries."""
        return int(sum(core.size for core in self.cores))

    def full(self) -> DenseTensor:
        return to_full(self)

    def round(self, tol: float = 0.0, max_rank: RankCap = None) -> "TensorTrain":
        return truncate(self, tol, max_rank).tt

    def norm(self) -> float:
        return norm(self)

    def inner(self, other: "TensorTrain") -> float:
        return inner(self, other)

    def __add__(self, other: "TensorTrain") -> "TensorTrain":
        return add(self, other)

    def __sub__(self, other: "TensorTrain") -> "TensorTrain":
        return add(self, scale(other, -1.0))

    def __neg__(self) -> "TensorTrain":
        return scale(self, -1.0)

    def __mul__(self, c: float) -> "TensorTrain":
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"TensorTrain(mode_dims={self.mode_dims}, ranks={self.ranks})"


class Truncation(NamedTuple):
    """Result of a rounding sweep."""

    tt: TensorTrain
    discarded: np.ndarray
    """Frobenius norm of the discarded singular values at each bond."""


def _validate_cores(cores: Sequence[np.ndarray]) -> None:
    """
    Check that cores form a valid tensor train.

    Args:
        cores: Candidate cores

    Raises:
        ValidationError: If the chain is empty, a core is not 3D or empty,
            the boundary ranks are not 1, or neighbouring ranks disagree
    """
    if len(cores) == 0:
        raise ValidationError("A tensor train needs at least one core")
    for k, core in enumerate(cores):
        if core.ndim != 3:
            raise ValidationError(f"Core {k} must be a 3D array, got shape {core.shape}")
        if core.size == 0:
            raise ValidationError(f"Core {k} is empty (shape {core.shape})")
        if k > 0 and cores[k - 1].shape[2] != core.shape[0]:
            raise ValidationError(
                f"Rank mismatch between core {k - 1} (right rank "
                f"{cores[k - 1].shape[2]}) and core {k} (left rank {core.shape[0]})"
            )
    if cores[0].shape[0] != 1:
        raise ValidationError(f"First core must have left rank 1, got {cores[0].shape[0]}")
    if cores[-1].shape[2] != 1:
        raise ValidationError(f"Last core must have right rank 1, got {cores[-1].shape[2]}")


def _check_same_dims(a: TensorTrain, b: TensorTrain) -> None:
    if a.mode_dims != b.mode_dims:
        raise ValidationError(
            f"Mode dimensions differ: {a.mode_dims} vs {b.mode_dims}"
        )


def _rank_caps(max_rank: RankCap, order: int) -> List[float]:
    """Per-bond rank caps for the d-1 interior bonds."""
    if max_rank is None:
        return [math.inf] * (order - 1)
    if isinstance(max_rank, (int, np.integer)):
        if max_rank < 1:
            raise ValidationError(f"max_rank must be positive, got {max_rank}")
        return [int(max_rank)] * (order - 1)
    caps = [int(r) for r in max_rank]
    if len(caps) == order + 1:
        caps = caps[1:-1]
    if len(caps) != order - 1:
        raise ValidationError(
            f"Rank caps need {order - 1} interior or {order + 1} full entries, got {len(caps)}"
        )
    if any(r < 1 for r in caps):
        raise ValidationError(f"Rank caps must be positive, got {caps}")
    return caps


def _svd(mat: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Thin SVD with a deterministic sign convention.

    The largest-magnitude entry of every left singular vector is made positive.
    """
    try:
        u, s, vt = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.warning("gesdd did not converge, falling back to gesvd")
        u, s, vt = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, vt * signs[:, None]


def _qr(mat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Economic QR with a nonnegative diagonal of R."""
    q, r = scipy.linalg.qr(mat, mode="economic")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def _truncation_rank(s: np.ndarray, delta: float, cap: float) -> int:
    """
    Smallest rank whose discarded tail has Frobenius norm at most ``delta``.

    Numerically zero singular values are always discarded and the rank never
    drops below 1.
    """
    if s.size == 0 or s[0] <= 0.0:
        return 1
    rank = int(np.count_nonzero(s > SVD_RELATIVE_CUTOFF * s[0]))
    if delta > 0.0:
        tails = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
        tails = np.append(tails, 0.0)
        rank = min(rank, int(np.argmax(tails <= delta)))
    rank = min(rank, cap)
    return max(1, int(rank))


def zeros_tt(mode_dims: Sequence[int]) -> TensorTrain:
    """Zero tensor with all ranks equal to 1."""
    return TensorTrain(tuple(np.zeros((1, int(p), 1)) for p in mode_dims))


def rank_one(vectors: Sequence[np.ndarray]) -> TensorTrain:
    """Elementary tensor ``v_1 ⊗ ... ⊗ v_d``."""
    return TensorTrain(tuple(np.asarray(v, dtype=float).reshape(1, -1, 1) for v in vectors))


def unit_tt(mode_dims: Sequence[int], index: Sequence[int]) -> TensorTrain:
    """Rank-1 delta tensor ``e_{nu_1} ⊗ ... ⊗ e_{nu_d}``."""
    if len(index) != len(mode_dims):
        raise ValidationError(
            f"Index {tuple(index)} does not match mode dimensions {tuple(mode_dims)}"
        )
    vectors = []
    for p, nu in zip(mode_dims, index):
        if not 0 <= nu < p:
            raise ValidationError(f"Index {nu} out of range for mode of size {p}")
        e = np.zeros(p)
        e[nu] = 1.0
        vectors.append(e)
    return rank_one(vectors)


def random_tt(
    mode_dims: Sequence[int],
    ranks: Union[int, Sequence[int]],
    rng: np.random.Generator,
) -> TensorTrain:
    """
    Tensor train with independent Gaussian cores.

    Args:
        mode_dims: Mode dimensions
        ranks: Interior rank (int), d-1 interior ranks, or the full tuple r_0..r_d
        rng: Random generator

    Returns:
        Random tensor train with the requested ranks
    """
    order = len(mode_dims)
    caps = _rank_caps(ranks, order)
    full_ranks = [1] + [int(r) for r in caps] + [1]
    cores = []
    for k, p in enumerate(mode_dims):
        shape = (full_ranks[k], int(p), full_ranks[k + 1])
        cores.append(rng.standard_normal(shape) / math.sqrt(shape[0] * shape[1]))
    return TensorTrain(tuple(cores))


def from_full(t: DenseTensor, tol: float = 0.0, max_rank: RankCap = None) -> TensorTrain:
    """
    Compress a dense tensor with the TT-SVD.

    Sequential truncated SVDs of the unfoldings, each discarding a tail of
    Frobenius norm at most ``tol * ||t|| / sqrt(d - 1)``, give a tensor train
    with relative reconstruction error at most ``tol``.

    Args:
        t: Dense tensor in row-major order
        tol: Relative accuracy (0 keeps the numerical rank)
        max_rank: Optional cap on the interior ranks

    Returns:
        Left-orthogonal tensor train

    Raises:
        ValidationError: On empty shapes, nonpositive dimensions or negative tol
    """
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        raise ValidationError("Cannot decompose a tensor of order 0")
    if any(p <= 0 for p in t.shape):
        raise ValidationError(f"Mode dimensions must be positive, got {t.shape}")
    if tol < 0:
        raise ValidationError(f"tol must be nonnegative, got {tol}")

    dims = t.shape
    order = len(dims)
    total = float(np.linalg.norm(t))
    if total == 0.0:
        return zeros_tt(dims)

    delta = tol * total / math.sqrt(order - 1) if order > 1 else 0.0
    caps = _rank_caps(max_rank, order)
    cores = []
    rank = 1
    rest = t.reshape(1, -1)
    for k in range(order - 1):
        u, s, vt = _svd(rest.reshape(rank * dims[k], -1))
        new_rank = _truncation_rank(s, delta, caps[k])
        cores.append(u[:, :new_rank].reshape(rank, dims[k], new_rank))
        rest = s[:new_rank, None] * vt[:new_rank]
        rank = new_rank
    cores.append(rest.reshape(rank, dims[-1], 1))
    return TensorTrain(tuple(cores), Orthogonality(Side.LEFT, order - 1))


def to_full(x: TensorTrain, max_entries: int = MAX_DENSE_ENTRIES) -> DenseTensor:
    """
    Materialize a tensor train as a dense row-major tensor.

    Raises:
        TensorSizeError: If the tensor has more than ``max_entries`` entries
    """
    entries = math.prod(x.mode_dims)
    if entries > max_entries:
        raise TensorSizeError(
            f"Dense tensor of shape {x.mode_dims} has {entries} entries, "
            f"above the guard of {max_entries}"
        )
    result = np.ones((1, 1))
    for core in x.cores:
        left, p, right = core.shape
        result = (result @ core.reshape(left, p * right)).reshape(-1, right)
    return result.reshape(x.mode_dims)


def evaluate(x: TensorTrain, feats: Sequence[np.ndarray]) -> float:
    """
    Contract every mode with a feature vector.

    Computes ``sum_nu U[nu] * prod_j feats[j][nu_j]`` by sequential
    vector-matrix products.

    Raises:
        ValidationError: If the number or lengths of the vectors do not match
    """
    if len(feats) != x.order:
        raise ValidationError(f"Expected {x.order} feature vectors, got {len(feats)}")
    vec = np.ones(1)
    for j, (core, f) in enumerate(zip(x.cores, feats)):
        f = np.asarray(f, dtype=float)
        if f.shape != (core.shape[1],):
            raise ValidationError(
                f"Feature vector {j} has shape {f.shape}, expected ({core.shape[1]},)"
            )
        vec = vec @ np.tensordot(f, core, axes=([0], [1]))
    return float(vec[0])


def evaluate_batch(x: TensorTrain, feats: Sequence[np.ndarray]) -> np.ndarray:
    """
    Vectorized ``evaluate`` over many samples.

    Args:
        x: Tensor train
        feats: One array per mode of shape (m, p_j); a leading dimension of 1
            broadcasts over the samples

    Returns:
        Array of shape (m,)
    """
    if len(feats) != x.order:
        raise ValidationError(f"Expected {x.order} feature arrays, got {len(feats)}")
    state = np.ones((1, 1, 1))
    for j, (core, f) in enumerate(zip(x.cores, feats)):
        f = np.asarray(f, dtype=float)
        left, p, right = core.shape
        if f.ndim != 2 or f.shape[1] != p:
            raise ValidationError(f"Feature array {j} has shape {f.shape}, expected (m, {p})")
        mat = (f @ core.transpose(1, 0, 2).reshape(p, left * right)).reshape(-1, left, right)
        state = state @ mat
    return state[:, 0, 0]


def orthogonalize(x: TensorTrain, pivot: int, side: Union[Side, str]) -> TensorTrain:
    """
    Move the non-orthogonal core to ``pivot`` by QR sweeps.

    ``side="left"`` left-orthogonalizes cores ``0..pivot-1``; ``side="right"``
    right-orthogonalizes cores ``pivot+1..d-1``. Interior ranks may shrink where
    an unfolding has fewer rows than columns.
    """
    side = Side(side)
    order = x.order
    if not 0 <= pivot < order:
        raise ValidationError(f"Pivot {pivot} out of range for order {order}")
    cores = list(x.cores)
    if side is Side.LEFT:
        for k in range(pivot):
            left, p, right = cores[k].shape
            q, r = _qr(cores[k].reshape(left * p, right))
            cores[k] = q.reshape(left, p, q.shape[1])
            cores[k + 1] = np.tensordot(r, cores[k + 1], axes=([1], [0]))
    else:
        for k in range(order - 1, pivot, -1):
            left, p, right = cores[k].shape
            q, r = _qr(cores[k].reshape(left, p * right).T)
            cores[k] = q.T.reshape(q.shape[1], p, right)
            cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=([2], [0]))
    return TensorTrain(tuple(cores), Orthogonality(side, pivot))


def truncate(x: TensorTrain, tol: float = 0.0, max_rank: RankCap = None) -> Truncation:
    """
    Round a tensor train with the TT-SVD.

    The train is right-orthogonalized, then swept left to right truncating each
    bond so that its discarded tail is at most ``tol * ||x|| / sqrt(d - 1)``
    and its rank at most the cap.

    Returns:
        The rounded, left-orthogonal train and the discarded tail per bond
    """
    if tol < 0:
        raise ValidationError(f"tol must be nonnegative, got {tol}")
    order = x.order
    caps = _rank_caps(max_rank, order)
    if order == 1:
        return Truncation(TensorTrain(x.cores, Orthogonality(Side.LEFT, 0)), np.zeros(0))

    cores = list(orthogonalize(x, 0, Side.RIGHT).cores)
    total = float(np.linalg.norm(cores[0]))
    if total == 0.0:
        return Truncation(zeros_tt(x.mode_dims), np.zeros(order - 1))

    delta = tol * total / math.sqrt(order - 1)
    discarded = np.zeros(order - 1)
    for k in range(order - 1):
        left, p, right = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(left * p, right))
        rank = _truncation_rank(s, delta, caps[k])
        discarded[k] = np.linalg.norm(s[rank:])
        cores[k] = u[:, :rank].reshape(left, p, rank)
        cores[k + 1] = np.tensordot(s[:rank, None] * vt[:rank], cores[k + 1], axes=([1], [0]))
    return Truncation(TensorTrain(tuple(cores), Orthogonality(Side.LEFT, order - 1)), discarded)


def round_tt(x: TensorTrain, tol: float = 0.0, max_rank: RankCap = None) -> TensorTrain:
    """Rounded tensor train (see ``truncate``)."""
    return truncate(x, tol, max_rank).tt


def add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Sum of two tensor trains; interior ranks add up."""
    _check_same_dims(a, b)
    order = a.order
    if order == 1:
        return TensorTrain((a.cores[0] + b.cores[0],))
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            cores.append(np.concatenate([ca, cb], axis=2))
        elif k == order - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            la, p, ra = ca.shape
            lb, _, rb = cb.shape
            core = np.zeros((la + lb, p, ra + rb))
            core[:la, :, :ra] = ca
            core[la:, :, ra:] = cb
            cores.append(core)
    return TensorTrain(tuple(cores))


def scale(a: TensorTrain, c: float, core: int = 0) -> TensorTrain:
    """Multiply a tensor train by ``c`` (applied to one designated core)."""
    if not 0 <= core < a.order:
        raise ValidationError(f"Core {core} out of range for order {a.order}")
    cores = list(a.cores)
    cores[core] = c * cores[core]
    return TensorTrain(tuple(cores))


def inner(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius inner product of the represented tensors."""
    _check_same_dims(a, b)
    env = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        env = np.tensordot(np.tensordot(env, ca, axes=([0], [0])), cb, axes=([0, 1], [0, 1]))
    return float(env[0, 0])


def norm(x: TensorTrain) -> float:
    """Frobenius norm, read off the last core of the left-orthogonal form."""
    return float(np.linalg.norm(orthogonalize(x, x.order - 1, Side.LEFT).cores[-1]))


def pad_modes(x: TensorTrain, mode_dims: Sequence[int]) -> TensorTrain:
    """Embed into larger mode dimensions by zero padding at the end of every mode."""
    if len(mode_dims) != x.order:
        raise ValidationError(f"Expected {x.order} mode dimensions, got {len(mode_dims)}")
    cores = []
    for core, p in zip(x.cores, mode_dims):
        if p < core.shape[1]:
            raise ValidationError(f"Cannot shrink mode of size {core.shape[1]} to {p}")
        cores.append(np.pad(core, ((0, 0), (0, p - core.shape[1]), (0, 0))))
    return TensorTrain(tuple(cores))


def pad_ranks(x: TensorTrain, ranks: Sequence[int]) -> TensorTrain:
    """Zero-pad the bond dimensions up to ``ranks`` without changing the tensor."""
    caps = _rank_caps(ranks, x.order)
    full = [1] + [int(r) for r in caps] + [1]
    cores = []
    for k, core in enumerate(x.cores):
        left, _, right = core.shape
        if full[k] < left or full[k + 1] < right:
            raise ValidationError(f"Cannot shrink ranks {x.ranks} to {tuple(full)}")
        cores.append(np.pad(core, ((0, full[k] - left), (0, 0), (0, full[k + 1] - right))))
    return TensorTrain(tuple(cores))


def max_ranks(mode_dims: Sequence[int]) -> Tuple[int, ...]:
    """Largest admissible ranks ``min(prod_{i<=j} p_i, prod_{i>j} p_i)``."""
    ranks = [1]
    for j in range(1, len(mode_dims)):
        ranks.append(min(math.prod(mode_dims[:j]), math.prod(mode_dims[j:])))
    ranks.append(1)
    return tuple(ranks)
