"""
Experiment runner: simulation, primal and dual solves, re-simulation and outputs.
"""

import json
import logging
import math
import platform
import subprocess
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import scipy
from tabulate import tabulate

from .config import ExperimentConfig
from .dual import DualOptions, optimize_dual
from .exceptions import NumericalError, PricingError, ValidationError
from .manifold import CGOptions, write_trace_csv
from .market import PathEnsemble, simulate
from .models import ResultRow
from .primal import ALSOptions, LSOptions, ValueFunctional, longstaff_schwartz
from .serialization import write_dual_result, write_value_functional

logger = logging.getLogger(__name__)

ENSEMBLE_REUSE = "training and re-simulation paths are shared by all degrees of one asset count"


class ExperimentRunner:
    """
    Run the experiments described by a configuration.

    For every (asset count, degree) cell the runner:
    1. Simulates training and re-simulation paths (once per asset count)
    2. Fits the primal regression and/or optimizes the dual martingale
    3. Re-simulates on the independent paths for the reported prices
    """

    def __init__(
        self,
        config: ExperimentConfig,
        output_dir: Optional[Union[str, Path]] = None,
        workers: int = 1,
    ):
        """
        Initialize the runner.

        Args:
            config: Experiment configuration
            output_dir: Output directory; defaults to the configured one
            workers: Worker budget for simulation and dual evaluation
        """
        self.config = config
        self.output_dir = Path(output_dir if output_dir is not None else config.output_dir)
        self.workers = workers
        self._ensembles: Dict[str, PathEnsemble] = {}
        self._ensemble_dim: Optional[int] = None
        self.elapsed = 0.0

    @property
    def methods(self) -> List[str]:
        return ["primal", "dual"] if self.config.method == "both" else [self.config.method]

    def run(self) -> List[ResultRow]:
        """
        Price the configured asset count for every configured degree.

        Raises:
            PricingError: On the first failing cell
        """
        return self._execute((self.config.d,), catch=False)

    def sweep(self) -> List[ResultRow]:
        """Price every (asset count, degree) cell; failing cells become ``nan`` rows."""
        return self._execute(self.config.dimensions, catch=True)

    def _execute(self, dims, catch: bool) -> List[ResultRow]:
        started = time.perf_counter()
        rows: List[ResultRow] = []
        for d in dims:
            for p in self.config.degrees:
                for method in self.methods:
                    rows.append(self._cell(method, d, p, catch))
            self._ensembles.clear()
        self.elapsed = time.perf_counter() - started
        return rows

    def _ensemble(self, kind: str, d: int) -> PathEnsemble:
        if self._ensemble_dim != d:
            self._ensembles.clear()
            self._ensemble_dim = d
        if kind not in self._ensembles:
            cfg = self.config
            with_increments = kind == "dual" or (kind == "fresh" and "dual" in self.methods)
            count = {"primal": cfg.paths, "dual": cfg.dual_paths, "fresh": cfg.resim_paths}[kind]
            seed = cfg.resim_seed if kind == "fresh" else cfg.seed
            self._ensembles[kind] = simulate(
                cfg.model(d),
                cfg.payoff(d),
                cfg.dates(),
                count,
                seed,
                keep_increments=with_increments,
                workers=self.workers,
            )
        return self._ensembles[kind]

    def _blank_row(self, method: str, d: int, p: int) -> ResultRow:
        cfg = self.config
        return ResultRow(
            method=method,
            payoff=cfg.payoff_kind,
            d=d,
            degree=p,
            steps=cfg.steps,
            s0=cfg.s0,
            strike=cfg.strike,
            sorted=cfg.sorted and method == "primal",
            paths=cfg.paths if method == "primal" else cfg.dual_paths,
            resim_paths=cfg.resim_paths,
        )

    def _cell(self, method: str, d: int, p: int, catch: bool) -> ResultRow:
        row = self._blank_row(method, d, p)
        started = time.perf_counter()
        try:
            if method == "primal":
                self._primal(row, d, p)
            else:
                self._dual(row, d, p)
        except (PricingError, np.linalg.LinAlgError, FloatingPointError) as exc:
            if not catch:
                raise
            logger.warning(f"{method} cell d={d} p={p} failed: {exc}")
            row.status = "failed"
            row.message = str(exc)
        row.wall_time = time.perf_counter() - started
        logger.info(
            f"{method} d={d} p={p}: price {row.price:.4f} +- {row.stderr:.4f} "
            f"({row.wall_time:.1f}s)"
        )
        return row

    def _primal(self, row: ResultRow, d: int, p: int) -> None:
        cfg = self.config
        if cfg.sorted and not cfg.model(d).is_exchangeable:
            raise ValidationError("Sorting the assets requires identical asset dynamics")
        options = LSOptions(
            sorted=cfg.sorted,
            als=ALSOptions(max_rank=cfg.max_rank, adaptive=cfg.adaptive, seed=cfg.seed),
            seed=cfg.seed,
        )
        result = longstaff_schwartz(
            self._ensemble("primal", d),
            cfg.payoff(d),
            p,
            options,
            fresh=self._ensemble("fresh", d),
        )
        row.price = result.lower_price if result.lower_price is not None else math.nan
        row.stderr = result.lower_stderr if result.lower_stderr is not None else math.nan
        row.in_sample = result.in_sample_price
        row.max_rank = result.max_rank
        row.mean_rank = result.mean_rank
        if cfg.checkpoints:
            for n, functional in enumerate(result.functionals, start=1):
                if isinstance(functional, ValueFunctional):
                    write_value_functional(
                        self.output_dir / "checkpoints" / f"primal_d{d}_p{p}_date{n}.tt",
                        functional,
                    )

    def _dual(self, row: ResultRow, d: int, p: int) -> None:
        cfg = self.config
        options = DualOptions(
            rank=cfg.dual_rank,
            sharpness=cfg.sharpness,
            seed=cfg.seed,
            cg=CGOptions(max_iterations=cfg.cg_max_iterations),
            workers=self.workers,
        )
        stem = f"dual_d{d}_p{p}"
        try:
            result = optimize_dual(
                self._ensemble("dual", d), p, options, fresh=self._ensemble("fresh", d)
            )
        except NumericalError as exc:
            path = write_trace_csv(self.output_dir / f"{stem}_failed_trace.csv", exc.trace)
            raise NumericalError(f"{exc} (trace written to {path})", exc.trace) from exc
        row.price = result.upper_price if result.upper_price is not None else math.nan
        row.stderr = result.upper_stderr if result.upper_stderr is not None else math.nan
        row.in_sample = result.validation_objective
        ranks = result.coefficients.tt.ranks
        row.max_rank = max(ranks)
        row.mean_rank = float(np.mean(ranks[1:-1])) if len(ranks) > 2 else 1.0
        write_dual_result(self.output_dir, result, stem)
        for degree, trace in enumerate(result.traces, start=1):
            write_trace_csv(self.output_dir / f"{stem}_trace_deg{degree}.csv", trace)

    def write_outputs(self, rows: List[ResultRow], name: str = "results") -> Dict[str, Path]:
        """
        Write ``<name>.csv``, ``manifest.json`` and ``ranks.csv`` to the output directory.

        Returns:
            Paths of the written files by kind
        """
        from . import __version__

        self.output_dir.mkdir(parents=True, exist_ok=True)
        columns = list(ResultRow.__dataclass_fields__)
        frame = pd.DataFrame([row.to_dict() for row in rows], columns=columns)
        results = self.output_dir / f"{name}.csv"
        frame.to_csv(results, index=False)

        ranks = self.output_dir / "ranks.csv"
        frame.loc[frame["method"] == "primal", ["d", "degree", "mean_rank", "max_rank"]].to_csv(
            ranks, index=False
        )

        manifest = self.output_dir / "manifest.json"
        manifest.write_text(
            json.dumps(
                {
                    "config": self.config.to_dict(),
                    "seeds": {"train": self.config.seed, "resim": self.config.resim_seed},
                    "ensemble_reuse": ENSEMBLE_REUSE,
                    "workers": self.workers,
                    "version": __version__,
                    "python": platform.python_version(),
                    "numpy": np.__version__,
                    "scipy": scipy.__version__,
                    "elapsed_seconds": self.elapsed,
                    "cells": [
                        {
                            "method": r.method,
                            "d": r.d,
                            "degree": r.degree,
                            "wall_time": r.wall_time,
                            "status": r.status,
                        }
                        for r in rows
                    ],
                },
                indent=2,
            )
        )
        logger.info(f"Wrote {results}, {ranks} and {manifest}")
        return {"results": results, "ranks": ranks, "manifest": manifest}


def format_results(rows: List[ResultRow]) -> str:
    """Console table with prices to two decimals."""
    table = [
        [r.method, r.payoff, r.d, r.degree, r.steps, f"{r.price:.2f}", f"{r.stderr:.3f}",
         f"{r.in_sample:.2f}", r.max_rank, f"{r.mean_rank:.2f}", f"{r.wall_time:.1f}", r.status]
        for r in rows
    ]
    headers = ["method", "payoff", "d", "p", "N", "price", "stderr", "in-sample",
               "max rank", "mean rank", "time [s]", "status"]
    return tabulate(table, headers=headers, tablefmt="github")


def run_checks(full: bool = False, tests_dir: Optional[Union[str, Path]] = None) -> int:
    """
    Run the bundled test suite with pytest.

    Args:
        full: Include the slow acceptance tests
        tests_dir: Test directory; defaults to ``tests`` next to the package

    Returns:
        The pytest exit code
    """
    if tests_dir is None:
        tests = Path(__file__).resolve().parent.parent / "tests"
    else:
        tests = Path(tests_dir)
    if not tests.is_dir():
        raise ValidationError(f"Test directory {tests} not found")
    command = [sys.executable, "-m", "pytest", str(tests), "--no-cov", "-q"]
    if not full:
        command += ["-m", "not slow"]
    logger.info(f"Running {' '.join(command)}")
    return subprocess.call(command)
