"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = ["as_vector", "as_matrix", "check_dim"]


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce a point set (sequence of equal-length vectors) to a finite (n, d) array."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{name} rows have mismatched dimensions") from exc
    if arr.ndim == 1 and arr.size > 0:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a nonempty (n, d) point set, got shape {arr.shape}")
    if arr.dtype == object:
        raise ValueError(f"{name} rows have mismatched dimensions")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_dim(x: np.ndarray, d: int, name: str = "x") -> np.ndarray:
    """Validate that a vector has dimension d."""
    arr = as_vector(x, name)
    if arr.shape[0] != d:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {d}")
    return arr
