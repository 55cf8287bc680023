"""Input validation helpers.

Every public entry point (including the sklearn-style estimators) funnels
user-supplied arrays through these, so the numerical code below them can
assume well-formed float64 inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError


def as_tensor3(x, channels: int | None = None, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a float64 array of shape (batch, seq, channel)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatchError(
            f"{name} must be 3-D (batch, seq, channel), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise DimensionMismatchError(f"{name} has an empty axis: {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise DimensionMismatchError(
            f"{name} has {arr.shape[2]} channels, expected {channels}")
    return arr


def as_matrix(m, name: str = "m") -> np.ndarray:
    """Coerce ``m`` to a non-empty 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionMismatchError(f"{name} is empty: {arr.shape}")
    return arr


def max_finite_abs(arr: np.ndarray) -> float:
    """Largest finite magnitude in ``arr``; +inf when nothing is finite.

    Used to report how far an iteration got before overflowing.
    """
    a = np.asarray(arr)
    finite = a[np.isfinite(a)]
    if finite.size == 0:
        return float("inf")
    return float(np.abs(finite).max())
