"""Argument checks and exception types shared across modules."""
from __future__ import annotations

import numpy as np


class FitError(RuntimeError):
    """A fit failed to converge or the data cannot constrain the model."""


class DataError(ValueError):
    """Input data is malformed (wrong shape, bad CSV, inconsistent lengths)."""


def check_positive(name, value, strict=True):
    v = float(value)
    if not np.isfinite(v) or (v <= 0 if strict else v < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {value!r}")
    return v


def check_probability(name, value):
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return v


def check_1d(name, x, dtype=float, min_len=0):
    a = np.asarray(x, dtype=dtype)
    if a.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {a.shape}")
    if a.size < min_len:
        raise DataError(f"{name} needs at least {min_len} entries, got {a.size}")
    return a


def check_window(name, n):
    if int(n) != n or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    return int(n)
