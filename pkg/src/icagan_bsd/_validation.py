"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, ShapeError


def as_float_array(x, *, ndim=None, name="input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim not in np.atleast_1d(ndim):
        raise ShapeError(f"{name} must have ndim in {ndim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    return arr


def check_series(x, name="series") -> np.ndarray:
    """Return a finite 1-D float64 copy-free view of ``x``."""
    arr = as_float_array(x, name=name)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def check_windows(X, width: int, name="windows") -> np.ndarray:
    arr = as_float_array(X, ndim=(1, 2), name=name)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != width:
        raise ShapeError(f"{name} must have {width} columns, got {arr.shape[1]}")
    return arr


def check_unit_open(u, name="u") -> np.ndarray:
    arr = as_float_array(u, ndim=(1, 2), name=name)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DataError(f"{name} must lie strictly inside (0, 1)")
    return arr


def check_probability(alpha: float, name="alpha") -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DataError(f"{name} must be in (0, 1), got {alpha}")
    return alpha


def sliding_windows(series: np.ndarray, width: int) -> np.ndarray:
    """All length-``width`` windows of a 1-D series, oldest sample first."""
    series = check_series(series)
    if series.size < width:
        raise DataError(f"series of length {series.size} is shorter than window {width}")
    return np.lib.stride_tricks.sliding_window_view(series, width)
