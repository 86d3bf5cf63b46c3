"""Input validation helpers."""

from __future__ import annotations

import numpy as np

__all__ = ["as_vector", "as_matrix", "check_finite", "check_positive"]


def as_vector(x, name: str = "x", size: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 1-d array, copying only when needed."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    check_finite(arr, name)
    return arr


def as_matrix(x, name: str = "x", cols: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 2-d array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def check_positive(value: float, name: str) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
