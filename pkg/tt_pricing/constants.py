"""
Constants for tensor-train option pricing.

This module contains the numerical defaults used throughout the library.
"""

# Dense materialization
MAX_DENSE_ENTRIES = 10**7
"""Largest number of entries ``to_full`` will materialize."""

SVD_RELATIVE_CUTOFF = 1e-13
"""Singular values below this fraction of the largest one are numerically zero."""

# Path simulation
SIMULATION_BLOCK_SIZE = 8192
"""Number of paths drawn from one RNG stream keyed by (seed, block index)."""

MAX_FEATURE_ENTRIES = 2 * 10**8
"""Upper bound on cached chaos-feature entries (m * N * |Lambda_p|)."""

WORKERS_ENV_VAR = "TT_PRICING_WORKERS"
"""Environment variable holding the worker budget."""

# Primal (Longstaff-Schwartz with ALS)
PRIMAL_VALIDATION_RATIO = 0.2
"""Validation set size as a fraction of the training set size."""

PRIMAL_MAX_RANK = 6
"""Default cap on adapted TT ranks of the value functions."""

ALS_STOP_TOLERANCE = 1e-4
"""Relative validation RMSE improvement required to continue sweeping or keep a rank increase."""

ALS_MAX_SWEEPS = 20
"""Maximum number of ALS sweeps per rank level."""

ALS_RIDGE_FACTOR = 1e-12
"""Ridge parameter relative to trace(A^T A) / cols of a micro-system."""

ALS_CONDITION_WARNING = 1e12
"""Condition number of a micro-system above which a warning is logged."""

# Riemannian conjugate gradient
ARMIJO_C1 = 1e-4
"""Sufficient decrease constant of the Armijo backtracking."""

ARMIJO_CONTRACTION = 0.5
"""Step contraction factor of the Armijo backtracking."""

ARMIJO_MAX_BACKTRACKS = 40
"""Maximum number of step contractions before the line search gives up."""

CG_INITIAL_STEP = 1.0
"""Trial step of the first line search."""

CG_RESTART_PERIOD = 20
"""Iterations between forced steepest-descent restarts."""

CG_PATIENCE = 10
"""Iterations without sufficient improvement before termination."""

CG_STAGNATION_TOLERANCE = 1e-6
"""Relative improvement of the best monitored objective counted as progress."""

CG_MAX_ITERATIONS = 200
"""Default iteration cap of the conjugate gradient driver."""

CG_GRADIENT_TOLERANCE = 1e-10
"""Riemannian gradient norm below which the driver stops."""

# Dual (chaos martingale)
DUAL_RANK = 4
"""Constant TT rank of the chaos coefficient tensor."""

DUAL_SHARPNESS = 50.0
"""Sharpness of the Boltzmann soft maximum."""

DUAL_VALIDATION_RATIO = 1.0 / 9.0
"""Validation set size as a fraction of the training set size."""

DUAL_NOISE_SCALE = 1e-6
"""Relative scale of the noise used to inflate rank-deficient starting points."""

DUAL_MIN_SAMPLES = 10
"""Smallest training sample count for which a validation split exists."""
