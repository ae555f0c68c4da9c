"""Small argument checks that raise :class:`ValidationError`."""

from __future__ import annotations

import math
from numbers import Integral, Real

import numpy as np

from .exceptions import ValidationError


def check_real(value, name: str, *, positive: bool = False, nonnegative: bool = False,
               upper: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ValidationError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    if positive and value <= 0:
        raise ValidationError(f"{name} must be > 0, got {value!r}")
    if nonnegative and value < 0:
        raise ValidationError(f"{name} must be >= 0, got {value!r}")
    if upper is not None and value > upper:
        raise ValidationError(f"{name} must be <= {upper:g}, got {value!r}")
    return value


def check_int(value, name: str, *, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_paths(values, *, min_points: int = 3) -> np.ndarray:
    """Return a finite 2-D float array of paths (one per row)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValidationError(f"paths must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] < min_points:
        raise ValidationError(f"paths need at least {min_points} grid points, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("paths contain non-finite values")
    return arr
