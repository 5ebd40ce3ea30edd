"""
Data models for pricing results.

This module defines the dataclasses exchanged between the pricing algorithms,
the experiment runner and the output writers.
"""

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

if TYPE_CHECKING:
    from .dual import ChaosCoefficients
    from .interfaces import ContinuationEstimate
    from .manifold import CGTraceRow


def _interior_mean(ranks: Tuple[int, ...]) -> float:
    interior = ranks[1:-1]
    return float(sum(interior)) / len(interior) if interior else 1.0


@dataclass
class FitRecord:
    """Summary of the value-function fit at one exercise date."""

    date_index: int
    num_samples: int
    num_train: int = 0
    num_valid: int = 0
    ranks: Tuple[int, ...] = ()
    sweeps: int = 0
    rank_increases: int = 0
    train_rmse: float = math.nan
    valid_rmse: float = math.nan
    max_condition: float = math.nan
    payoff_coefficient: float = math.nan
    skipped: bool = False

    @property
    def max_rank(self) -> int:
        return max(self.ranks) if self.ranks else 1

    @property
    def mean_rank(self) -> float:
        return _interior_mean(self.ranks) if self.ranks else 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "date_index": self.date_index,
            "num_samples": self.num_samples,
            "num_train": self.num_train,
            "num_valid": self.num_valid,
            "ranks": list(self.ranks),
            "sweeps": self.sweeps,
            "rank_increases": self.rank_increases,
            "train_rmse": self.train_rmse,
            "valid_rmse": self.valid_rmse,
            "max_condition": self.max_condition,
            "payoff_coefficient": self.payoff_coefficient,
            "skipped": self.skipped,
        }


@dataclass
class LSResult:
    """Outcome of the Longstaff-Schwartz regression."""

    functionals: List["ContinuationEstimate"]
    """Continuation estimates for dates 1..N-1."""
    degree: int
    bounds: Tuple[float, float]
    in_sample_price: float
    records: List[FitRecord] = field(default_factory=list)
    lower_price: Optional[float] = None
    lower_stderr: Optional[float] = None
    sorted: bool = False
    seed: Optional[int] = None

    @property
    def max_rank(self) -> int:
        fitted = [r.max_rank for r in self.records if not r.skipped]
        return max(fitted) if fitted else 1

    @property
    def mean_rank(self) -> float:
        fitted = [r.mean_rank for r in self.records if not r.skipped]
        return float(sum(fitted)) / len(fitted) if fitted else 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "degree": self.degree,
            "bounds": list(self.bounds),
            "in_sample_price": self.in_sample_price,
            "lower_price": self.lower_price,
            "lower_stderr": self.lower_stderr,
            "sorted": self.sorted,
            "seed": self.seed,
            "max_rank": self.max_rank,
            "mean_rank": self.mean_rank,
            "records": [r.to_dict() for r in self.records],
        }


@dataclass
class DualResult:
    """Outcome of the dual chaos optimization."""

    coefficients: "ChaosCoefficients"
    degree: int
    rank: int
    sharpness: float
    train_objective: float
    validation_objective: float
    traces: List[List["CGTraceRow"]] = field(default_factory=list)
    """One optimization trace per degree of the continuation."""
    upper_price: Optional[float] = None
    upper_stderr: Optional[float] = None
    num_train: int = 0
    num_valid: int = 0
    seed: Optional[int] = None
    resim_seed: Optional[int] = None

    @property
    def iterations(self) -> int:
        return sum(max(len(trace) - 1, 0) for trace in self.traces)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "degree": self.degree,
            "rank": self.rank,
            "sharpness": self.sharpness,
            "num_train": self.num_train,
            "num_valid": self.num_valid,
            "seed": self.seed,
            "resim_seed": self.resim_seed,
            "train_objective": self.train_objective,
            "validation_objective": self.validation_objective,
            "price": self.upper_price,
            "stderr": self.upper_stderr,
            "iterations": self.iterations,
            "ranks": list(self.coefficients.tt.ranks),
        }


@dataclass
class ResultRow:
    """One line of an experiment result table."""

    method: str
    payoff: str
    d: int
    degree: int
    steps: int
    s0: float
    strike: float
    sorted: bool
    paths: int
    resim_paths: int
    price: float = math.nan
    stderr: float = math.nan
    in_sample: float = math.nan
    wall_time: float = 0.0
    max_rank: float = math.nan
    mean_rank: float = math.nan
    status: str = "ok"
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "payoff": self.payoff,
            "d": self.d,
            "degree": self.degree,
            "steps": self.steps,
            "s0": self.s0,
            "strike": self.strike,
            "sorted": self.sorted,
            "paths": self.paths,
            "resim_paths": self.resim_paths,
            "price": self.price,
            "stderr": self.stderr,
            "in_sample": self.in_sample,
            "wall_time": self.wall_time,
            "max_rank": self.max_rank,
            "mean_rank": self.mean_rank,
            "status": self.status,
            "message": self.message,
        }
