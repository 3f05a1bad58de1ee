"""Decorrelation by least-squares one-step prediction, and empirical-CDF
uniformization. Both are fitted on anomaly-free data only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, check_series
from .exceptions import DataError, NumericalError

RIDGE = 1e-8


@dataclass(frozen=True)
class Whitener:
    order: int
    coeffs: np.ndarray  # coeffs[i] multiplies z_{t-1-i}
    intercept: float
    scale: float = 1.0  # training residual std, used only to standardize

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "coeffs": [float(c) for c in self.coeffs],
            "intercept": float(self.intercept),
            "scale": float(self.scale),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Whitener":
        return cls(int(obj["order"]), np.array(obj["coeffs"], dtype=np.float64),
                   float(obj["intercept"]), float(obj.get("scale", 1.0)))


def _lag_matrix(z: np.ndarray, p: int) -> np.ndarray:
    # row t (t >= p) holds z_{t-1}, ..., z_{t-p}
    n = z.size
    return np.column_stack([z[p - 1 - i : n - 1 - i] for i in range(p)])


def fit_whitener(series, p: int = 4) -> Whitener:
    """Least-squares AR(p) one-step predictor with intercept.

    Solved through the centered normal equations with a 1e-8 ridge on the
    diagonal. A constant series yields an intercept-only predictor.
    """
    z = check_series(series)
    p = int(p)
    if p < 1:
        raise DataError("predictor order must be >= 1")
    if z.size <= 10 * p:
        raise DataError(f"need more than {10 * p} samples to fit an order-{p} predictor, got {z.size}")
    if np.ptp(z) == 0.0:
        return Whitener(p, np.zeros(p), float(z[0]), 1.0)
    X = _lag_matrix(z, p)
    y = z[p:]
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    n = y.size
    A = Xc.T @ Xc / n + RIDGE * np.eye(p)
    coeffs = np.linalg.solve(A, Xc.T @ yc / n)
    intercept = float(ym - coeffs @ xm)
    resid = y - intercept - X @ coeffs
    sd = float(np.std(resid))
    if not (np.all(np.isfinite(coeffs)) and np.isfinite(intercept) and np.isfinite(sd)):
        raise NumericalError("predictor fit overflowed; rescale the input series")
    return Whitener(p, coeffs, intercept, sd if sd > 0 else 1.0)


def whiten(w: Whitener, series) -> np.ndarray:
    """Prediction residuals ``z_t - (intercept + sum_i coeffs_i z_{t-i})``.

    The output is ``p`` samples shorter than the input.
    """
    z = check_series(series)
    if z.size <= w.order:
        raise DataError(f"series must be longer than the predictor order {w.order}")
    return z[w.order :] - w.intercept - _lag_matrix(z, w.order) @ w.coeffs


@dataclass(frozen=True)
class EcdfModel:
    """Sorted anomaly-free reference values, one column per component."""

    sorted: np.ndarray  # (n, d)

    @property
    def n(self) -> int:
        return self.sorted.shape[0]

    def to_dict(self) -> dict:
        if self.sorted.shape[1] == 1:
            return {"sorted": self.sorted[:, 0].tolist()}
        return {"sorted": self.sorted.T.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "EcdfModel":
        arr = np.array(obj["sorted"], dtype=np.float64)
        arr = arr[None, :] if arr.ndim == 1 else arr
        return cls(arr.T.copy())


def fit_ecdf(samples, max_reference: int | None = None) -> EcdfModel:
    """Sort the reference samples of each component (columns of 2-D input).

    With ``max_reference`` set, larger references are thinned to that many
    evenly spaced order statistics.
    """
    x = as_float_array(samples, ndim=(1, 2), name="samples")
    x = x[:, None] if x.ndim == 1 else x
    if x.shape[0] == 0:
        raise DataError("empty ECDF reference")
    if x.shape[0] < 2:
        raise DataError("ECDF reference needs at least 2 samples")
    s = np.sort(x, axis=0)
    if max_reference is not None and s.shape[0] > max_reference:
        n = s.shape[0]
        ranks = np.floor((np.arange(1, max_reference + 1) * (n + 1)) / (max_reference + 1)).astype(int) - 1
        s = s[np.clip(ranks, 0, n - 1)]
    return EcdfModel(np.ascontiguousarray(s))


def apply_ecdf(m: EcdfModel, v):
    """``#{reference <= v} / (n + 1)``, clamped into ``[1/(n+1), n/(n+1)]``.

    ``v`` may be a scalar (single-component model), a vector with one entry per
    component, or a 2-D array with one column per component.
    """
    v_arr = np.asarray(v, dtype=np.float64)
    n, d = m.sorted.shape
    scalar = v_arr.ndim == 0
    V = v_arr.reshape(1, 1) if scalar else v_arr
    if V.ndim == 1:
        V = V[:, None] if d == 1 else V[None, :]
    if V.shape[1] != d:
        raise DataError(f"expected {d} components, got {V.shape[1]}")
    out = np.empty_like(V)
    for j in range(d):
        out[:, j] = np.searchsorted(m.sorted[:, j], V[:, j], side="right")
    out = np.clip(out, 1, n) / (n + 1)
    if scalar:
        return float(out[0, 0])
    return out.reshape(v_arr.shape)


class LinearPredictionWhitener(TransformerMixin, BaseEstimator):
    """Per-channel AR(p) prediction residuals, optionally standardized by the
    training residual standard deviation."""

    def __init__(self, order=4, standardize=True):
        self.order = order
        self.standardize = standardize

    def fit(self, X, y=None):
        self.whitener_ = fit_whitener(X, self.order)
        return self

    def transform(self, X):
        check_is_fitted(self, "whitener_")
        r = whiten(self.whitener_, X)
        return r / self.whitener_.scale if self.standardize else r

    def save(self, path):
        check_is_fitted(self, "whitener_")
        Path(path).write_text(json.dumps(self.whitener_.to_dict()))

    @classmethod
    def load(cls, path, standardize=True):
        est = cls(standardize=standardize)
        est.whitener_ = Whitener.from_dict(json.loads(Path(path).read_text()))
        est.order = est.whitener_.order
        return est


class EmpiricalCdfTransformer(TransformerMixin, BaseEstimator):
    """Map each column to (0, 1) through its anomaly-free empirical CDF."""

    def __init__(self, max_reference=None):
        self.max_reference = max_reference

    def fit(self, X, y=None):
        self.model_ = fit_ecdf(X, self.max_reference)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = as_float_array(X, ndim=(1, 2), name="X")
        return apply_ecdf(self.model_, X)

    def save(self, path):
        check_is_fitted(self, "model_")
        Path(path).write_text(json.dumps(self.model_.to_dict()))

    @classmethod
    def load(cls, path):
        est = cls()
        est.model_ = EcdfModel.from_dict(json.loads(Path(path).read_text()))
        return est
