"""
Tensor-train Bermudan option pricing

A Python library for pricing multi-asset Bermudan options with tensor-train
regression (Longstaff-Schwartz with rank-adaptive ALS) for lower bounds and
tensor-train chaos martingales (Riemannian CG) for dual upper bounds.
"""

from .config import ExperimentConfig, load_config
from .dual import optimize_dual, resimulate_upper
from .experiment import ExperimentRunner
from .market import BlackScholesModel, PayoffFactory, simulate
from .primal import longstaff_schwartz, resimulate_lower
from .tensor_train import TensorTrain

__version__ = "0.1.0"
__all__ = [
    "BlackScholesModel",
    "ExperimentConfig",
    "ExperimentRunner",
    "PayoffFactory",
    "TensorTrain",
    "load_config",
    "longstaff_schwartz",
    "optimize_dual",
    "resimulate_lower",
    "resimulate_upper",
    "simulate",
]
