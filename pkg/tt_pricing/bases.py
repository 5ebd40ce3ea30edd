"""
Polynomial bases for the regression and chaos features.

``IntervalBasis`` holds p polynomials of degree < p on [a, b] that are
orthonormal in H²(a, b) with

    <f, g> = int_a^b (f g + f' g' + f'' g'') dx.

They are stored as Legendre series in the mapped variable t in [-1, 1];
the Gram matrix of the Legendre seed is computed with Gauss-Legendre
quadrature (exact for these integrands) and inverted by a Cholesky factor.

``HermiteBasis`` holds the probabilists' Hermite polynomials normalized by
sqrt(k!), orthonormal under the standard normal law.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple, Union

import numpy as np
import scipy.linalg
from numpy.polynomial import hermite_e, legendre
from scipy.special import comb, factorial

from .exceptions import ValidationError
from .interfaces import UnivariateBasis

logger = logging.getLogger(__name__)


def _require_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("Basis evaluation points must be finite")
    return x


def _legendre_derivative(size: int, order: int) -> np.ndarray:
    """Column j holds the Legendre coefficients of the ``order``-th derivative of P_j."""
    der = legendre.legder(np.eye(size), m=order)
    out = np.zeros((size, size))
    out[: der.shape[0]] = der
    return out


def _vander(vander, x: np.ndarray, degree: int) -> np.ndarray:
    """Pseudo-Vandermonde matrix with shape ``x.shape + (degree + 1,)``, also for scalars."""
    return vander(np.atleast_1d(x), degree).reshape(np.shape(x) + (degree + 1,))


@dataclass(frozen=True, eq=False)
class IntervalBasis(UnivariateBasis):
    """
    H²(a, b)-orthonormal polynomials.

    Row k of ``coefficients`` holds the Legendre coefficients of B_k in the
    variable ``t = (2x - a - b) / (b - a)``.
    """

    a: float
    b: float
    coefficients: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def _scale(self) -> float:
        return 2.0 / (self.b - self.a)

    def _mapped(self, x: np.ndarray) -> np.ndarray:
        return (2.0 * x - self.a - self.b) / (self.b - self.a)

    def _seed(self, x: np.ndarray) -> np.ndarray:
        return _vander(legendre.legvander, self._mapped(x), self.size - 1)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = _require_finite(x)
        return self._seed(x) @ self.coefficients.T

    def derivative(self, x: np.ndarray, order: int = 1) -> np.ndarray:
        """Values of the ``order``-th derivatives, shape ``x.shape + (size,)``."""
        x = _require_finite(x)
        der = _legendre_derivative(self.size, order)
        return self._scale**order * (self._seed(x) @ der @ self.coefficients.T)

    def gram_matrix(self) -> np.ndarray:
        """Exact H²(a, b) Gram matrix of the basis."""
        return self.coefficients @ _seed_gram(self.a, self.b, self.size) @ self.coefficients.T


def _seed_gram(a: float, b: float, size: int) -> np.ndarray:
    """H²(a, b) Gram matrix of the mapped Legendre polynomials P_0..P_{size-1}."""
    nodes, weights = legendre.leggauss(size + 1)
    values = legendre.legvander(nodes, size - 1)
    scale = 2.0 / (b - a)
    gram = np.zeros((size, size))
    for order in range(3):
        der = values @ _legendre_derivative(size, order)
        gram += scale ** (2 * order) * (der.T * weights) @ der
    return gram * (b - a) / 2.0


def build_interval_basis(a: float, b: float, p: int) -> IntervalBasis:
    """
    Build p polynomials of degree < p on [a, b], orthonormal in H²(a, b).

    Args:
        a: Left end of the interval
        b: Right end of the interval
        p: Number of basis functions

    Returns:
        The basis

    Raises:
        ValidationError: If ``a >= b`` or ``p < 1``
    """
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise ValidationError(f"Interval requires finite a < b, got [{a}, {b}]")
    if p < 1:
        raise ValidationError(f"Basis size must be at least 1, got {p}")
    gram = _seed_gram(a, b, p)
    chol = scipy.linalg.cholesky(gram, lower=True)
    coefficients = scipy.linalg.solve_triangular(chol, np.eye(p), lower=True)
    logger.debug(
        f"H2 basis on [{a:.6g}, {b:.6g}] with {p} functions, cond(G)={np.linalg.cond(gram):.3e}"
    )
    return IntervalBasis(float(a), float(b), coefficients)


@dataclass(frozen=True)
class HermiteBasis(UnivariateBasis):
    """Normalized probabilists' Hermite polynomials h_0..h_degree."""

    degree: int

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValidationError(f"Hermite degree must be nonnegative, got {self.degree}")

    @property
    def size(self) -> int:
        return self.degree + 1

    @property
    def normalization(self) -> np.ndarray:
        """``sqrt(k!)`` for k = 0..degree."""
        return np.sqrt(factorial(np.arange(self.size), exact=False))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = _require_finite(x)
        return _vander(hermite_e.hermevander, x, self.degree) / self.normalization


def eval_basis(basis: UnivariateBasis, x: Union[float, np.ndarray]) -> np.ndarray:
    """Evaluate every basis function at ``x``; a scalar gives a vector of length ``size``."""
    return basis.evaluate(np.asarray(x, dtype=float))


def _compositions(total: int, parts: int) -> Iterator[Tuple[int, ...]]:
    """Compositions of ``total`` into ``parts`` with the first part descending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """
    Total-degree multi-indices in graded order.

    Indices are grouped by total degree; inside a degree the first component
    decreases, then the second, and so on. Position 0 is the zero multi-index
    and every lower-degree set is a prefix of a higher-degree one.
    """

    dimension: int
    degree: int
    indices: np.ndarray = field(repr=False)
    _positions: Dict[Tuple[int, ...], int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.indices.flags.writeable = False
        self._positions.update({tuple(int(v) for v in a): i for i, a in enumerate(self.indices)})

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def __iter__(self) -> Iterator[Tuple[int, ...]]:
        return (tuple(int(v) for v in a) for a in self.indices)

    def position(self, alpha: Tuple[int, ...]) -> int:
        """Position of a multi-index.

        Raises:
            ValidationError: If ``alpha`` is not in the set
        """
        try:
            return self._positions[tuple(int(v) for v in alpha)]
        except KeyError:
            raise ValidationError(f"Multi-index {tuple(alpha)} is not in the set") from None


def build_multi_index_set(dimension: int, degree: int) -> MultiIndexSet:
    """
    All multi-indices of length ``dimension`` with total degree at most ``degree``.

    Raises:
        ValidationError: If ``dimension < 1`` or ``degree < 0``
    """
    if dimension < 1:
        raise ValidationError(f"Dimension must be at least 1, got {dimension}")
    if degree < 0:
        raise ValidationError(f"Degree must be nonnegative, got {degree}")
    rows = list(
        itertools.chain.from_iterable(
            _compositions(total, dimension) for total in range(degree + 1)
        )
    )
    expected = comb(dimension + degree, degree, exact=True)
    if len(rows) != expected:
        raise RuntimeError(f"Enumerated {len(rows)} multi-indices, expected {expected}")
    return MultiIndexSet(dimension, degree, np.array(rows, dtype=np.int64).reshape(-1, dimension))


def chaos_feature(index_set: MultiIndexSet, g: np.ndarray) -> np.ndarray:
    """
    Tensorized Hermite features ``prod_k h_{alpha_k}(g_k)`` for every alpha in the set.

    Args:
        index_set: Multi-index set
        g: Gaussian vector(s) with the component axis last, shape (..., dimension)

    Returns:
        Array of shape (..., len(index_set)); position 0 is 1

    Raises:
        ValidationError: On a length mismatch or non-finite input
    """
    g = _require_finite(g)
    if g.ndim == 0 or g.shape[-1] != index_set.dimension:
        raise ValidationError(
            f"Expected vectors of length {index_set.dimension}, got shape {g.shape}"
        )
    values = HermiteBasis(index_set.degree).evaluate(g)
    components = np.arange(index_set.dimension)
    return np.prod(values[..., components, index_set.indices], axis=-1)
