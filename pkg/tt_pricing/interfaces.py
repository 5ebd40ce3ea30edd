"""
Abstract interfaces of the pricing library.

This module defines the core interfaces that allow the pricing algorithms
to be written against bases, payoffs, continuation estimates and objectives
without depending on their concrete implementations.
"""

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Iterable, Union

import numpy as np

if TYPE_CHECKING:
    from .manifold import RankOneTerms
    from .tensor_train import TensorTrain


class UnivariateBasis(ABC):
    """Abstract interface for a finite family of univariate functions."""

    @property
    @abstractmethod
    def size(self) -> int:
        """Number of basis functions."""

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """
        Evaluate all basis functions.

        Args:
            x: Points of any shape

        Returns:
            Array of shape ``x.shape + (size,)``
        """


class Payoff(ABC):
    """Abstract interface for an exercise payoff of a multi-asset option."""

    @abstractmethod
    def __call__(self, s: np.ndarray) -> np.ndarray:
        """
        Evaluate the (undiscounted) payoff.

        Args:
            s: Asset prices with the asset axis last

        Returns:
            Nonnegative payoff values of shape ``s.shape[:-1]``
        """

    @property
    @abstractmethod
    def is_symmetric(self) -> bool:
        """Whether the payoff is invariant under permutations of the assets."""


class ContinuationEstimate(ABC):
    """Abstract interface for an approximate continuation value at one date."""

    @abstractmethod
    def __call__(self, states: np.ndarray) -> np.ndarray:
        """
        Evaluate the continuation value.

        Args:
            states: Asset states of shape (m, d)

        Returns:
            Continuation values of shape (m,)
        """


class SmoothObjective(ABC):
    """Abstract interface for a smooth functional on tensor trains."""

    @abstractmethod
    def value(self, x: "TensorTrain") -> float:
        """
        Evaluate the objective.

        Args:
            x: Point in tensor-train format

        Returns:
            Objective value
        """

    @abstractmethod
    def euclidean_gradient(
        self, x: "TensorTrain"
    ) -> Union["TensorTrain", "RankOneTerms", Iterable["RankOneTerms"]]:
        """
        Evaluate the Euclidean gradient.

        Args:
            x: Point in tensor-train format

        Returns:
            The gradient as a tensor train or as a stream of rank-1 term blocks
        """
