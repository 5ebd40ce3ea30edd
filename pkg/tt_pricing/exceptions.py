"""
Exception hierarchy for the pricing library.
"""

from typing import Any, List, Optional


class PricingError(Exception):
    """Base class for all library errors."""


class ValidationError(PricingError, ValueError):
    """Raised when arguments, shapes or parameter ranges are invalid."""


class TensorSizeError(ValidationError):
    """Raised when a dense tensor would exceed the materialization guard."""


class ConfigError(ValidationError):
    """Raised when an experiment configuration cannot be parsed or validated."""

    def __init__(
        self,
        message: str,
        section: Optional[str] = None,
        key: Optional[str] = None,
        line: Optional[int] = None,
    ):
        self.section = section
        self.key = key
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if section is not None:
            field = f"[{section}]" if key is None else f"[{section}] {key}"
            location.append(field)
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class NumericalError(PricingError, RuntimeError):
    """Raised when an optimizer meets a non-finite objective or gradient."""

    def __init__(self, message: str, trace: Optional[List[Any]] = None):
        super().__init__(message)
        self.trace = trace or []
