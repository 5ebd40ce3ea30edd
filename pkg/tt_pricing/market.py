"""
Multi-asset Black-Scholes market: exact path simulation, payoffs and discounting.

Asset j follows

    dS^j = S^j ((r - delta_j) dt + sigma_j dW^j),    d<W^i, W^j> = Gamma_ij dt

with a common correlation ``rho`` off the diagonal of Gamma. Paths are sampled
exactly on the exercise grid from standardized Gaussian increments ``G_n``,
which are kept for the chaos features of the dual method.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Type, Union

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .constants import SIMULATION_BLOCK_SIZE
from .exceptions import ValidationError
from .interfaces import Payoff

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _per_asset(value: ArrayLike, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    try:
        arr = np.array(np.broadcast_to(arr, (d,)))
    except ValueError:
        raise ValidationError(
            f"{name} must be a scalar or have length {d}, got shape {arr.shape}"
        ) from None
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


def correlation_root(d: int, rho: float) -> np.ndarray:
    """
    Lower-triangular square root of the equicorrelation matrix.

    Args:
        d: Number of assets
        rho: Common correlation, ``-1/(d-1) < rho <= 1``

    Returns:
        L with ``L @ L.T = Gamma``; for ``rho = 1`` the rank-1 root with a column of ones

    Raises:
        ValidationError: If rho is outside the admissible range
    """
    if d < 1:
        raise ValidationError(f"Number of assets must be positive, got {d}")
    if d == 1:
        return np.ones((1, 1))
    lower = -1.0 / (d - 1)
    if not (lower < rho <= 1.0):
        raise ValidationError(
            f"Correlation {rho} outside the admissible range ({lower:.6g}, 1] for d={d}"
        )
    if rho == 1.0:
        root = np.zeros((d, d))
        root[:, 0] = 1.0
        return root
    gamma = np.full((d, d), rho)
    np.fill_diagonal(gamma, 1.0)
    return scipy.linalg.cholesky(gamma, lower=True)


@dataclass(frozen=True, eq=False)
class BlackScholesModel:
    """Correlated geometric Brownian motions with per-asset parameters."""

    d: int
    s0: ArrayLike
    r: float
    dividends: ArrayLike
    sigma: ArrayLike
    rho: float
    maturity: float

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValidationError(f"Number of assets must be positive, got {self.d}")
        s0 = _per_asset(self.s0, self.d, "s0")
        sigma = _per_asset(self.sigma, self.d, "sigma")
        dividends = _per_asset(self.dividends, self.d, "dividends")
        if np.any(s0 <= 0):
            raise ValidationError("Initial prices must be positive")
        if np.any(sigma <= 0):
            raise ValidationError("Volatilities must be positive")
        if not self.maturity > 0:
            raise ValidationError(f"Maturity must be positive, got {self.maturity}")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "dividends", dividends)
        object.__setattr__(self, "_root", correlation_root(self.d, self.rho))

    @property
    def correlation_root(self) -> np.ndarray:
        return self._root  # type: ignore[attr-defined]

    @property
    def is_exchangeable(self) -> bool:
        """Whether the asset dynamics are invariant under permutations."""
        return bool(
            np.all(self.s0 == self.s0[0])
            and np.all(self.sigma == self.sigma[0])
            and np.all(self.dividends == self.dividends[0])
        )


class BasketPut(Payoff):
    """Put on a weighted basket, ``(K - sum_j w_j s_j)_+``."""

    kind = "basket_put"

    def __init__(self, strike: float, weights: ArrayLike):
        if not strike > 0:
            raise ValidationError(f"Strike must be positive, got {strike}")
        self.strike = float(strike)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return np.maximum(self.strike - np.asarray(s, dtype=float) @ self.weights, 0.0)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def __repr__(self) -> str:
        return f"BasketPut(strike={self.strike}, d={self.weights.size})"


class MaxCall(Payoff):
    """Call on the weighted maximum, ``(max_j w_j s_j - K)_+``."""

    kind = "max_call"

    def __init__(self, strike: float, weights: ArrayLike):
        if not strike > 0:
            raise ValidationError(f"Strike must be positive, got {strike}")
        self.strike = float(strike)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        weighted = np.asarray(s, dtype=float) * self.weights
        return np.maximum(np.max(weighted, axis=-1) - self.strike, 0.0)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def __repr__(self) -> str:
        return f"MaxCall(strike={self.strike}, d={self.weights.size})"


class PayoffFactory:
    """Factory for payoffs by kind name."""

    def __init__(self):
        """Initialize the registry of payoff kinds."""
        self.payoffs: Dict[str, Type[Payoff]] = {
            BasketPut.kind: BasketPut,
            MaxCall.kind: MaxCall,
        }
        self.default_weights = {
            BasketPut.kind: lambda d: np.full(d, 1.0 / d),
            MaxCall.kind: lambda d: np.ones(d),
        }

    @property
    def kinds(self) -> Sequence[str]:
        return tuple(self.payoffs)

    def create(
        self, kind: str, strike: float, d: int, weights: Optional[ArrayLike] = None
    ) -> Payoff:
        """
        Create a payoff.

        Args:
            kind: ``basket_put`` or ``max_call``
            strike: Strike K
            d: Number of assets
            weights: Per-asset weights; defaults to 1/d for baskets and 1 for max-calls

        Returns:
            Payoff instance

        Raises:
            ValidationError: On an unknown kind or weights of the wrong length
        """
        if kind not in self.payoffs:
            raise ValidationError(f"Unknown payoff kind '{kind}', expected one of {self.kinds}")
        w = self.default_weights[kind](d) if weights is None else _per_asset(weights, d, "weights")
        return self.payoffs[kind](strike, w)  # type: ignore[call-arg]


def payoff_eval(payoff: Payoff, s: np.ndarray) -> Union[float, np.ndarray]:
    """Evaluate a payoff at one price vector (returns a float) or at a stack of them."""
    s = np.asarray(s, dtype=float)
    values = payoff(s)
    return float(values) if s.ndim == 1 else values


def exercise_dates(maturity: float, n: int) -> np.ndarray:
    """Equidistant grid ``t_k = k T / n`` for k = 0..n."""
    if n < 1:
        raise ValidationError(f"Number of exercise steps must be positive, got {n}")
    if not maturity > 0:
        raise ValidationError(f"Maturity must be positive, got {maturity}")
    return np.linspace(0.0, maturity, n + 1)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """
    Simulated paths on the exercise grid.

    ``paths`` has shape (m, N+1, d), ``increments`` (m, N, d) or None when not
    kept, ``discounted_payoffs`` (m, N+1) with ``Z_n = exp(-r t_n) phi(S_n)``.
    """

    dates: np.ndarray
    paths: np.ndarray = field(repr=False)
    increments: Optional[np.ndarray] = field(repr=False)
    discounted_payoffs: np.ndarray = field(repr=False)
    seed: int
    is_sorted: bool = False

    @property
    def num_paths(self) -> int:
        return int(self.paths.shape[0])

    @property
    def num_steps(self) -> int:
        """Number of steps N (dates t_0..t_N)."""
        return int(self.dates.shape[0] - 1)

    @property
    def dimension(self) -> int:
        return int(self.paths.shape[2])

    def subset(self, rows: np.ndarray) -> "PathEnsemble":
        """Ensemble restricted to the given path indices."""
        return replace(
            self,
            paths=self.paths[rows],
            increments=None if self.increments is None else self.increments[rows],
            discounted_payoffs=self.discounted_payoffs[rows],
        )


def _validate_dates(dates: np.ndarray, maturity: float) -> np.ndarray:
    dates = np.asarray(dates, dtype=float)
    if dates.ndim != 1 or dates.size < 2:
        raise ValidationError("Exercise dates must be a vector with at least two entries")
    if dates[0] != 0.0:
        raise ValidationError(f"Exercise dates must start at 0, got {dates[0]}")
    if np.any(np.diff(dates) <= 0):
        raise ValidationError("Exercise dates must be strictly increasing")
    if not math.isclose(dates[-1], maturity, rel_tol=1e-12):
        raise ValidationError(f"Last exercise date {dates[-1]} differs from maturity {maturity}")
    return dates


def _simulate_block(
    model: BlackScholesModel, dates: np.ndarray, seed: int, block: int, count: int
) -> np.ndarray:
    rng = np.random.default_rng([seed, block])
    return rng.standard_normal((count, dates.size - 1, model.d))


def simulate(
    model: BlackScholesModel,
    payoff: Payoff,
    dates: np.ndarray,
    m: int,
    seed: int,
    keep_increments: bool = True,
    workers: int = 1,
) -> PathEnsemble:
    """
    Simulate ``m`` paths exactly on the exercise grid.

    Block b of ``SIMULATION_BLOCK_SIZE`` paths draws its increments from the
    stream keyed by ``(seed, b)``, so results do not depend on ``workers``.

    Args:
        model: Market model
        payoff: Exercise payoff
        dates: Exercise grid from 0 to the maturity
        m: Number of paths
        seed: Nonnegative RNG seed
        keep_increments: Whether to store the standardized increments
        workers: Number of threads drawing blocks

    Returns:
        The path ensemble

    Raises:
        ValidationError: On invalid dates, path count or seed
    """
    if m < 1:
        raise ValidationError(f"Number of paths must be positive, got {m}")
    if seed < 0:
        raise ValidationError(f"Seed must be nonnegative, got {seed}")
    dates = _validate_dates(dates, model.maturity)
    steps = dates.size - 1
    dt = np.diff(dates)
    drift = (model.r - model.dividends - 0.5 * model.sigma**2)[None, :] * dt[:, None]
    vol = model.sigma[None, :] * np.sqrt(dt)[:, None]
    root_t = model.correlation_root.T

    paths = np.empty((m, steps + 1, model.d))
    increments = np.empty((m, steps, model.d)) if keep_increments else None
    paths[:, 0, :] = model.s0

    def fill(block: int) -> None:
        start = block * SIMULATION_BLOCK_SIZE
        stop = min(start + SIMULATION_BLOCK_SIZE, m)
        g = _simulate_block(model, dates, seed, block, stop - start)
        log_growth = np.cumsum(drift + vol * (g @ root_t), axis=1)
        paths[start:stop, 1:, :] = model.s0 * np.exp(log_growth)
        if increments is not None:
            increments[start:stop] = g

    blocks = range(math.ceil(m / SIMULATION_BLOCK_SIZE))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    else:
        for block in blocks:
            fill(block)

    discounted = np.exp(-model.r * dates)[None, :] * payoff(paths)
    logger.debug(f"Simulated {m} paths over {steps} steps for d={model.d} (seed {seed})")
    return PathEnsemble(dates, paths, increments, discounted, int(seed))


def sort_paths(ensemble: PathEnsemble) -> PathEnsemble:
    """
    Sort the asset coordinates of every state in non-increasing order.

    Discounted payoffs and increments are kept as simulated.
    """
    if ensemble.is_sorted:
        return ensemble
    ordered = -np.sort(-ensemble.paths, axis=-1)
    return replace(ensemble, paths=ordered, is_sorted=True)


def _black_scholes_d(s0: float, strike: float, r: float, q: float, sigma: float, t: float):
    d1 = (math.log(s0 / strike) + (r - q + 0.5 * sigma**2) * t) / (sigma * math.sqrt(t))
    return d1, d1 - sigma * math.sqrt(t)


def european_put_price(
    s0: float, strike: float, r: float, q: float, sigma: float, t: float
) -> float:
    """Black-Scholes price of a European put with continuous dividend yield ``q``."""
    d1, d2 = _black_scholes_d(s0, strike, r, q, sigma, t)
    return float(strike * math.exp(-r * t) * norm.cdf(-d2) - s0 * math.exp(-q * t) * norm.cdf(-d1))


def european_call_price(
    s0: float, strike: float, r: float, q: float, sigma: float, t: float
) -> float:
    """Black-Scholes price of a European call with continuous dividend yield ``q``."""
    d1, d2 = _black_scholes_d(s0, strike, r, q, sigma, t)
    return float(s0 * math.exp(-q * t) * norm.cdf(d1) - strike * math.exp(-r * t) * norm.cdf(d2))
