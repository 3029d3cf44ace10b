"""Input validation helpers used by the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError


def require(condition: bool, message: str, exc=ConfigError) -> None:
    if not condition:
        raise exc(message)


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, rejecting non-numeric content."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise DataError(f"{name} must be numeric: {err}") from None
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def positive_int(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_level(level: float) -> float:
    if not (0.0 < level < 1.0):
        raise ConfigError(f"significance level must lie in (0, 1), got {level!r}")
    return float(level)


def check_vector_length(z, length: int, name: str) -> np.ndarray:
    arr = as_float_array(z, name)
    if arr.ndim != 1 or arr.shape[0] != length:
        raise ConfigError(f"{name} must be a length-{length} vector, got shape {arr.shape}")
    return arr
