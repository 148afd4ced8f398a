"""Small argument-checking helpers used across the package."""
import math

import numpy as np

from .exceptions import InvalidInputError


def check_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    return value


def check_positive(name, value, strict=True):
    """Raise unless ``value`` is a finite number > 0 (>= 0 if not strict)."""
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(v) or (v <= 0 if strict else v < 0):
        bound = "> 0" if strict else ">= 0"
        raise InvalidInputError(f"{name} must be finite and {bound}, got {value!r}")
    return v


def check_in_open_interval(name, value, lo, hi):
    v = float(value)
    if not (lo < v < hi):
        raise InvalidInputError(f"{name} must lie in ({lo}, {hi}), got {value!r}")
    return v


def check_time_grid(t):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise InvalidInputError("time grid needs at least two samples")
    if not np.all(np.diff(t) > 0):
        raise InvalidInputError("time grid must be strictly increasing")
    return t
