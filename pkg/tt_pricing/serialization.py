"""
File formats for tensor trains, value functionals, path ensembles and dual results.

All binary formats are little-endian: unsigned integers as ``<u8`` and
floating-point data as ``<f8``.

    tensor train      b"TTCORE01", d, mode_dims[d], ranks[d+1], cores (row-major)
    value functional  b"TTVALF01", c_phi, a, b, p, then a tensor train
    path ensemble     b"TTPATH01", m, N, d, has_increments, dates[N+1], seed,
                      S (m, N+1, d), G (m, N, d) if present
"""

import json
import logging
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .bases import build_interval_basis
from .exceptions import ValidationError
from .interfaces import Payoff
from .market import PathEnsemble
from .models import DualResult
from .primal import ValueFunctional
from .tensor_train import TensorTrain

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TT_MAGIC = b"TTCORE01"
VALUE_MAGIC = b"TTVALF01"
ENSEMBLE_MAGIC = b"TTPATH01"


def _write_uints(handle: BinaryIO, values) -> None:
    handle.write(np.asarray(values, dtype="<u8").tobytes())


def _write_floats(handle: BinaryIO, values) -> None:
    handle.write(np.asarray(values, dtype="<f8").tobytes())


def _read(handle: BinaryIO, dtype: str, count: int) -> np.ndarray:
    size = np.dtype(dtype).itemsize * count
    data = handle.read(size)
    if len(data) != size:
        raise ValidationError(f"Unexpected end of file (wanted {size} bytes, got {len(data)})")
    return np.frombuffer(data, dtype=dtype, count=count)


def _expect_magic(handle: BinaryIO, magic: bytes) -> None:
    found = handle.read(len(magic))
    if found != magic:
        raise ValidationError(f"Bad file header {found!r}, expected {magic!r}")


def _dump_tt(handle: BinaryIO, x: TensorTrain) -> None:
    handle.write(TT_MAGIC)
    _write_uints(handle, [x.order])
    _write_uints(handle, x.mode_dims)
    _write_uints(handle, x.ranks)
    for core in x.cores:
        _write_floats(handle, core.ravel())


def _load_tt(handle: BinaryIO) -> TensorTrain:
    _expect_magic(handle, TT_MAGIC)
    order = int(_read(handle, "<u8", 1)[0])
    dims = [int(v) for v in _read(handle, "<u8", order)]
    ranks = [int(v) for v in _read(handle, "<u8", order + 1)]
    cores = []
    for k, p in enumerate(dims):
        shape = (ranks[k], p, ranks[k + 1])
        cores.append(_read(handle, "<f8", int(np.prod(shape))).reshape(shape).astype(float))
    return TensorTrain(tuple(cores))


def write_tensor_train(path: PathLike, x: TensorTrain) -> Path:
    """Write a tensor train in the binary core format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        _dump_tt(handle, x)
    return path


def read_tensor_train(path: PathLike) -> TensorTrain:
    """Read a tensor train written by ``write_tensor_train``."""
    with open(path, "rb") as handle:
        return _load_tt(handle)


def write_value_functional(path: PathLike, functional: ValueFunctional) -> Path:
    """Checkpoint a value functional (coefficients, payoff weight and basis interval)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    basis = functional.basis
    with open(path, "wb") as handle:
        handle.write(VALUE_MAGIC)
        _write_floats(handle, [functional.payoff_coefficient, basis.a, basis.b])
        _write_uints(handle, [basis.size])
        _dump_tt(handle, functional.tt)
    return path


def read_value_functional(path: PathLike, payoff: Payoff) -> ValueFunctional:
    """
    Read a value-functional checkpoint; the basis is rebuilt from its interval.

    Args:
        path: Checkpoint file
        payoff: Payoff the functional was fitted with
    """
    with open(path, "rb") as handle:
        _expect_magic(handle, VALUE_MAGIC)
        c_phi, a, b = (float(v) for v in _read(handle, "<f8", 3))
        size = int(_read(handle, "<u8", 1)[0])
        tt = _load_tt(handle)
    return ValueFunctional(tt, c_phi, build_interval_basis(a, b, size), payoff)


def write_ensemble(path: PathLike, ensemble: PathEnsemble) -> Path:
    """Dump the paths (and increments, if kept) of an ensemble."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    has_increments = ensemble.increments is not None
    with open(path, "wb") as handle:
        handle.write(ENSEMBLE_MAGIC)
        _write_uints(
            handle,
            [ensemble.num_paths, ensemble.num_steps, ensemble.dimension, int(has_increments)],
        )
        _write_floats(handle, ensemble.dates)
        _write_uints(handle, [ensemble.seed])
        _write_floats(handle, ensemble.paths.ravel())
        if has_increments:
            _write_floats(handle, ensemble.increments.ravel())
    logger.info(f"Wrote {ensemble.num_paths} paths to {path}")
    return path


def read_ensemble(path: PathLike, payoff: Payoff, r: float) -> PathEnsemble:
    """
    Load an ensemble dump; discounted payoffs are recomputed.

    Args:
        path: Dump file
        payoff: Payoff to evaluate along the paths
        r: Risk-free rate used for discounting
    """
    with open(path, "rb") as handle:
        _expect_magic(handle, ENSEMBLE_MAGIC)
        m, steps, d, has_increments = (int(v) for v in _read(handle, "<u8", 4))
        dates = _read(handle, "<f8", steps + 1).copy()
        seed = int(_read(handle, "<u8", 1)[0])
        paths = _read(handle, "<f8", m * (steps + 1) * d).reshape(m, steps + 1, d).copy()
        increments = None
        if has_increments:
            increments = _read(handle, "<f8", m * steps * d).reshape(m, steps, d).copy()
    discounted = np.exp(-r * dates)[None, :] * payoff(paths)
    return PathEnsemble(dates, paths, increments, discounted, seed)


def write_dual_result(directory: PathLike, result: DualResult, stem: str = "dual") -> Path:
    """
    Write ``<stem>.tt`` with the chaos coefficients and ``<stem>.json`` with the summary.

    Returns:
        Path of the JSON summary
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor_train(directory / f"{stem}.tt", result.coefficients.tt)
    summary = directory / f"{stem}.json"
    summary.write_text(json.dumps(result.to_dict(), indent=2))
    return summary
