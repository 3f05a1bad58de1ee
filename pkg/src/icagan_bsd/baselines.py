"""One-class SVM with an RBF kernel, solved by SMO pairwise coordinate descent.

The dual is scaled so that the coefficients sum to one::

    min_a  1/2 a^T Q a    s.t.  0 <= a_i <= 1 / (nu * n),  sum(a) = 1

with ``Q_ij = exp(-gamma * ||x_i - x_j||^2)``. Working pairs are picked with the
second-order rule of Fan, Chen & Lin (2005). The decision value of a point is
``sum_i a_i k(sv_i, x) - rho``; negative values are outliers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConvergenceError, DataError, ShapeError

_TAU = 1e-12


def rbf(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"rbf arguments differ in shape: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d.ravel(), d.ravel())))


def rbf_matrix(X: np.ndarray, Y: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def default_gamma(X: np.ndarray) -> float:
    """``1 / (d * mean feature variance)``, falling back to 1 for constant data."""
    total_var = float(np.sum(np.var(X, axis=0)))
    return 1.0 / total_var if total_var > 0 else 1.0


def _smo(Q: np.ndarray, C: float, tol: float, max_iter: int):
    n = Q.shape[0]
    alpha = np.zeros(n)
    n_full = int(np.floor(1.0 / C + 1e-12))
    n_full = min(n_full, n)
    alpha[:n_full] = C
    if n_full < n:
        alpha[n_full] = max(0.0, 1.0 - n_full * C)
    G = Q @ alpha
    diag = np.diag(Q).copy()
    edge = C * 1e-12

    for it in range(max_iter):
        up = alpha < C - edge
        low = alpha > edge
        neg_g = -G
        cand = np.where(up, neg_g, -np.inf)
        i = int(np.argmax(cand))
        g_max = cand[i]
        g_min = np.min(np.where(low, neg_g, np.inf))
        if g_max - g_min < tol:
            return alpha, G, it
        b = g_max + G  # b_t = -G_i + G_t
        a = diag[i] + diag - 2.0 * Q[i]
        a = np.where(a > 0, a, _TAU)
        score = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        if not np.isfinite(score[j]):
            return alpha, G, it
        delta = b[j] / a[j]
        delta = min(delta, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        G += delta * (Q[:, i] - Q[:, j])
    gap = float(np.max(np.where(alpha < C, -G, -np.inf)) - np.min(np.where(alpha > 0, -G, np.inf)))
    raise ConvergenceError(f"SMO did not reach tolerance {tol} in {max_iter} iterations (KKT gap {gap:.3g})")


def _rho(alpha: np.ndarray, G: np.ndarray, C: float) -> float:
    edge = C * 1e-9
    free = (alpha > edge) & (alpha < C - edge)
    if np.any(free):
        return float(np.mean(G[free]))
    at_upper = alpha >= C - edge
    at_zero = alpha <= edge
    lo = np.max(G[at_upper]) if np.any(at_upper) else -np.inf
    hi = np.min(G[at_zero]) if np.any(at_zero) else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    return float(lo if np.isfinite(lo) else hi)


class OneClassSVM(OutlierMixin, BaseEstimator):
    """nu-one-class SVM (RBF kernel) trained on anomaly-free samples only.

    Parameters
    ----------
    nu : float
        Upper bound on the training-outlier fraction, lower bound on the
        support-vector fraction.
    gamma : float or "auto"
        Kernel width; "auto" uses ``1 / sum of feature variances``.
    tol : float
        KKT violation tolerance of the SMO solver.
    max_iter : int
        Iteration cap before a ``ConvergenceError``.

    ``predict`` follows the scikit-learn outlier convention: +1 inlier, -1 outlier.
    """

    def __init__(self, nu=0.1, gamma="auto", tol=1e-4, max_iter=500_000):
        self.nu = nu
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must be in (0, 1], got {self.nu}")
        if n < 2:
            raise DataError("need at least two training samples")
        gamma = default_gamma(X) if self.gamma == "auto" else float(self.gamma)
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        C = 1.0 / (self.nu * n)
        Q = rbf_matrix(X, X, gamma)
        alpha, G, n_iter = _smo(Q, C, self.tol, self.max_iter)
        keep = alpha > 0
        self.gamma_ = gamma
        self.rho_ = _rho(alpha, G, C)
        self.support_vectors_ = X[keep].copy()
        self.dual_coef_ = alpha[keep].copy()
        self.n_iter_ = n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Kernel expansion ``sum_i a_i k(sv_i, x)`` without the offset."""
        check_is_fitted(self, "support_vectors_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return rbf_matrix(X, self.support_vectors_, self.gamma_) @ self.dual_coef_

    def decision_function(self, X):
        return self.score_samples(X) - self.rho_

    def predict(self, X):
        return np.where(self.decision_function(X) < 0, -1, 1)

    def to_dict(self) -> dict:
        check_is_fitted(self, "support_vectors_")
        return {
            "sv": self.support_vectors_.tolist(),
            "alpha": self.dual_coef_.tolist(),
            "rho": self.rho_,
            "gamma": self.gamma_,
            "nu": self.nu,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "OneClassSVM":
        est = cls(nu=obj["nu"], gamma=obj["gamma"])
        est.support_vectors_ = np.array(obj["sv"], dtype=np.float64)
        est.dual_coef_ = np.array(obj["alpha"], dtype=np.float64)
        est.rho_ = float(obj["rho"])
        est.gamma_ = float(obj["gamma"])
        est.n_features_in_ = est.support_vectors_.shape[1]
        est.n_iter_ = 0
        return est

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "OneClassSVM":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OcSvmModel:
    """Plain-data view of a trained one-class SVM."""

    sv: np.ndarray
    alpha: np.ndarray
    rho: float
    gamma: float
    nu: float


def fit(windows, nu: float = 0.1, gamma="auto", tol: float = 1e-4) -> OcSvmModel:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2 or windows.shape[0] < 10:
        raise DataError("need at least 10 training windows")
    est = OneClassSVM(nu=nu, gamma=gamma, tol=tol).fit(windows)
    return OcSvmModel(est.support_vectors_, est.dual_coef_, est.rho_, est.gamma_, nu)


def score(model: OcSvmModel, window) -> float:
    """Decision value of one window; lower means more anomalous."""
    w = np.asarray(window, dtype=np.float64).ravel()
    if w.shape[0] != model.sv.shape[1]:
        raise ShapeError(f"window has {w.shape[0]} entries, model expects {model.sv.shape[1]}")
    k = rbf_matrix(w[None, :], model.sv, model.gamma)[0]
    return float(k @ model.alpha - model.rho)
