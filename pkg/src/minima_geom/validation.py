"""Shared input validation helpers."""
from __future__ import annotations

import numpy as np

__all__ = ["NumericError", "as_float_array", "check_point", "check_symmetric_2x2"]


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values."""


def as_float_array(x, name: str, dtype=np.float64, ndim: int | None = None) -> np.ndarray:
    """Convert to a float array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_point(point, name: str = "point") -> np.ndarray:
    """Validate a 2-D point, returning it as a float64 array of shape (2,)."""
    arr = np.asarray(point, dtype=np.float64)
    if arr.shape != (2,):
        raise ValueError(f"{name} must have shape (2,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_symmetric_2x2(H, name: str = "H", atol: float = 1e-8) -> np.ndarray:
    """Validate a symmetric 2x2 matrix, returning it as float64."""
    arr = np.asarray(H, dtype=np.float64)
    if arr.shape != (2, 2):
        raise ValueError(f"{name} must have shape (2, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    scale = max(1.0, float(np.max(np.abs(arr))))
    if abs(arr[0, 1] - arr[1, 0]) > atol * scale:
        raise ValueError(f"{name} is not symmetric")
    return arr
