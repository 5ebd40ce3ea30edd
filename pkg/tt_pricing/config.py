"""
Experiment configuration files.

A configuration is an INI file with the sections ``[model]``, ``[payoff]``,
``[method]``, ``[sampling]`` and ``[output]``. Parse errors report the line,
validation errors the ``[section] key`` and its line.
"""

import configparser
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .constants import (
    CG_MAX_ITERATIONS,
    DUAL_RANK,
    DUAL_SHARPNESS,
    PRIMAL_MAX_RANK,
    WORKERS_ENV_VAR,
)
from .exceptions import ConfigError, ValidationError
from .interfaces import Payoff
from .market import BlackScholesModel, PayoffFactory, exercise_dates

logger = logging.getLogger(__name__)

METHODS = ("primal", "dual", "both")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
_REQUIRED = object()


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment (a single run or a sweep)."""

    d: int
    s0: float
    r: float
    dividend: float
    sigma: float
    rho: float
    maturity: float
    steps: int
    payoff_kind: str
    strike: float
    weights: Optional[Tuple[float, ...]] = None
    method: str = "primal"
    degrees: Tuple[int, ...] = (2,)
    dims: Tuple[int, ...] = ()
    max_rank: int = PRIMAL_MAX_RANK
    adaptive: bool = True
    sorted: bool = False
    dual_rank: int = DUAL_RANK
    sharpness: float = DUAL_SHARPNESS
    cg_max_iterations: int = CG_MAX_ITERATIONS
    paths: int = 100_000
    dual_paths: int = 20_000
    resim_paths: int = 100_000
    seed: int = 1
    resim_seed: int = 2
    output_dir: str = "results"
    checkpoints: bool = False
    source: Optional[str] = field(default=None, compare=False)

    @property
    def dimensions(self) -> Tuple[int, ...]:
        """Asset counts of a sweep (the configured d when no list is given)."""
        return self.dims or (self.d,)

    def model(self, d: Optional[int] = None) -> BlackScholesModel:
        d = self.d if d is None else d
        return BlackScholesModel(
            d=d,
            s0=self.s0,
            r=self.r,
            dividends=self.dividend,
            sigma=self.sigma,
            rho=self.rho,
            maturity=self.maturity,
        )

    def payoff(self, d: Optional[int] = None) -> Payoff:
        d = self.d if d is None else d
        weights = None
        if self.weights is not None:
            weights = self.weights if len(self.weights) == d else self.weights[:1] * d
        return PayoffFactory().create(self.payoff_kind, self.strike, d, weights)

    def dates(self) -> np.ndarray:
        return exercise_dates(self.maturity, self.steps)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["degrees"] = list(self.degrees)
        data["dims"] = list(self.dims)
        data["weights"] = None if self.weights is None else list(self.weights)
        return data


class _Locator:
    """Line numbers of sections and keys in the raw configuration text."""

    def __init__(self, text: str):
        self.lines: Dict[Tuple[str, Optional[str]], int] = {}
        section = None
        for number, line in enumerate(text.splitlines(), start=1):
            match = _SECTION_RE.match(line)
            if match:
                section = match.group(1).strip()
                self.lines.setdefault((section, None), number)
                continue
            match = _KEY_RE.match(line)
            if match and section is not None:
                self.lines.setdefault((section, match.group(1).strip().lower()), number)

    def error(self, message: str, section: str, key: Optional[str] = None) -> ConfigError:
        line = self.lines.get((section, key), self.lines.get((section, None)))
        return ConfigError(message, section=section, key=key, line=line)


def _parse_int_list(text: str) -> Tuple[int, ...]:
    """Parse ``"2"``, ``"1-7"`` or ``"1, 2, 5"`` (ranges inclusive); empty gives ``()``."""
    values: List[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "-" in part[1:]:
            low, high = part.split("-", 1)
            values.extend(range(int(low), int(high) + 1))
        else:
            values.append(int(part))
    return tuple(values)


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, locator: _Locator):
        self.parser = parser
        self.locator = locator

    def raw(self, section: str, key: str, default: Any) -> Optional[str]:
        if not self.parser.has_section(section):
            if default is _REQUIRED:
                raise self.locator.error("missing section", section)
            return None
        if not self.parser.has_option(section, key):
            if default is _REQUIRED:
                raise self.locator.error("missing required key", section, key)
            return None
        return self.parser.get(section, key)

    def get(self, section: str, key: str, convert, default: Any = None) -> Any:
        text = self.raw(section, key, default)
        if text is None:
            return default
        try:
            return convert(text)
        except ValueError as exc:
            raise self.locator.error(f"invalid value '{text}' ({exc})", section, key) from None


def _boolean(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError("expected yes/no")


def _weights(text: str) -> Optional[Tuple[float, ...]]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return tuple(float(p) for p in parts) if parts else None


def parse_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    """
    Parse and validate configuration text.

    Raises:
        ConfigError: On syntax errors, missing keys or invalid values
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except (
        configparser.MissingSectionHeaderError,
        configparser.DuplicateSectionError,
        configparser.DuplicateOptionError,
    ) as exc:
        raise ConfigError(exc.message.splitlines()[0], line=getattr(exc, "lineno", None)) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("syntax error", line=line) from None

    locator = _Locator(text)
    read = _Reader(parser, locator)
    config = ExperimentConfig(
        d=read.get("model", "d", int, _REQUIRED),
        s0=read.get("model", "s0", float, _REQUIRED),
        r=read.get("model", "r", float, _REQUIRED),
        dividend=read.get("model", "dividend", float, 0.0),
        sigma=read.get("model", "sigma", float, _REQUIRED),
        rho=read.get("model", "rho", float, 0.0),
        maturity=read.get("model", "maturity", float, _REQUIRED),
        steps=read.get("model", "steps", int, _REQUIRED),
        payoff_kind=read.get("payoff", "kind", str.strip, _REQUIRED),
        strike=read.get("payoff", "strike", float, _REQUIRED),
        weights=read.get("payoff", "weights", _weights, None),
        method=read.get("method", "method", lambda s: s.strip().lower(), "primal"),
        degrees=read.get("method", "degrees", _parse_int_list, (2,)),
        dims=read.get("method", "dims", _parse_int_list, ()),
        max_rank=read.get("method", "max_rank", int, PRIMAL_MAX_RANK),
        adaptive=read.get("method", "adaptive", _boolean, True),
        sorted=read.get("method", "sorted", _boolean, False),
        dual_rank=read.get("method", "dual_rank", int, DUAL_RANK),
        sharpness=read.get("method", "sharpness", float, DUAL_SHARPNESS),
        cg_max_iterations=read.get("method", "cg_max_iterations", int, CG_MAX_ITERATIONS),
        paths=read.get("sampling", "paths", int, 100_000),
        dual_paths=read.get("sampling", "dual_paths", int, 20_000),
        resim_paths=read.get("sampling", "resim_paths", int, 100_000),
        seed=read.get("sampling", "seed", int, 1),
        resim_seed=read.get("sampling", "resim_seed", int, 2),
        output_dir=read.get("output", "directory", str.strip, "results"),
        checkpoints=read.get("output", "checkpoints", _boolean, False),
        source=source,
    )
    validate_config(config, locator)
    return config


def validate_config(config: ExperimentConfig, locator: Optional[_Locator] = None) -> None:
    """
    Check parameter ranges and the market invariants for every asset count.

    Raises:
        ConfigError: Naming the offending section and key
    """
    locator = locator or _Locator("")

    def check(condition: bool, message: str, section: str, key: str) -> None:
        if not condition:
            raise locator.error(message, section, key)

    check(config.method in METHODS, f"method must be one of {METHODS}", "method", "method")
    check(config.steps >= 1, "steps must be at least 1", "model", "steps")
    check(all(p >= 1 for p in config.degrees) or config.method == "dual",
          "primal degrees must be at least 1", "method", "degrees")
    check(all(p >= 0 for p in config.degrees), "degrees must be nonnegative", "method", "degrees")
    check(all(d >= 1 for d in config.dimensions), "asset counts must be positive", "method", "dims")
    check(config.max_rank >= 1, "max_rank must be at least 1", "method", "max_rank")
    check(config.dual_rank >= 1, "dual_rank must be at least 1", "method", "dual_rank")
    check(config.sharpness > 0, "sharpness must be positive", "method", "sharpness")
    check(config.paths >= 1, "paths must be positive", "sampling", "paths")
    check(config.dual_paths >= 10, "dual_paths must be at least 10", "sampling", "dual_paths")
    check(config.resim_paths >= 2, "resim_paths must be at least 2", "sampling", "resim_paths")
    check(config.seed >= 0, "seed must be nonnegative", "sampling", "seed")
    check(config.resim_seed >= 0, "resim_seed must be nonnegative", "sampling", "resim_seed")
    check(config.resim_seed != config.seed,
          "resim_seed must differ from seed", "sampling", "resim_seed")
    check(config.payoff_kind in PayoffFactory().kinds,
          f"kind must be one of {tuple(PayoffFactory().kinds)}", "payoff", "kind")
    if config.weights is not None:
        check(all(len(config.weights) in (1, d) for d in config.dimensions),
              "weights must have one entry or one per asset", "payoff", "weights")

    check(config.s0 > 0, "s0 must be positive", "model", "s0")
    check(config.sigma > 0, "sigma must be positive", "model", "sigma")
    check(config.maturity > 0, "maturity must be positive", "model", "maturity")
    check(config.strike > 0, "strike must be positive", "payoff", "strike")
    for d in config.dimensions:
        lower = -1.0 / (d - 1) if d > 1 else -np.inf
        check(
            lower < config.rho <= 1.0,
            f"rho={config.rho} outside the admissible range ({lower:.6g}, 1] for d={d}",
            "model",
            "rho",
        )
        try:
            config.model(d)
        except ValidationError as exc:
            raise locator.error(str(exc), "model", "d") from None
        try:
            config.payoff(d)
        except ValidationError as exc:
            raise locator.error(str(exc), "payoff", "strike") from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a configuration file.

    Raises:
        ConfigError: If the file cannot be read or is invalid
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def resolve_workers(explicit: Optional[int] = None) -> int:
    """Worker budget from the argument, else ``TT_PRICING_WORKERS``, else 1."""
    if explicit is not None:
        value: Union[int, str] = explicit
    else:
        value = os.environ.get(WORKERS_ENV_VAR, "1")
    try:
        workers = int(value)
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV_VAR} must be an integer, got '{value}'") from None
    if workers < 1:
        raise ValidationError(f"Worker count must be positive, got {workers}")
    return workers
