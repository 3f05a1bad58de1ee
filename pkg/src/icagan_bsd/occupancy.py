"""Coincidence (occupancy) uniformity tests.

A block of ``N`` values in (0, 1) is quantized into ``K`` equal bins. ``K_i``
counts the bins holding exactly ``i`` values. Under uniformity the singleton
count ``K_1`` is as large as it gets, so the K1 test rejects when ``K_1`` is
small; the K0 test rejects when many bins are empty. The VC test thresholds a
linear combination of ``K_0 .. K_r`` and the OC-SVM test a nonlinear one.

The null law of ``K_1`` is known in closed form and evaluated here in exact
rational arithmetic. The other statistics are calibrated by Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from math import comb, perm
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_probability, check_unit_open
from .exceptions import DataError, NotFittedError, ShapeError

NEVER_REJECT = -1  # K1 threshold sentinel: no k has lower-tail mass <= alpha
VARIANTS = ("k0", "k1", "vc", "ocsvm")
DEFAULT_ORDER = 15
ANOMALY = "anomaly"
ANOMALY_FREE = "anomaly_free"


def default_bins(n: int) -> int:
    """Bin count rule: the square of the block size."""
    return int(n) * int(n)


@dataclass(frozen=True)
class OccupancyProfile:
    K: int
    N: int
    counts: np.ndarray
    coincidences: np.ndarray  # (K_0, ..., K_r)
    remainder: int = 0  # bins holding more than r values

    @property
    def k0(self) -> int:
        return int(self.coincidences[0])

    @property
    def k1(self) -> int:
        return int(self.coincidences[1]) if self.coincidences.size > 1 else 0

    @property
    def order(self) -> int:
        return self.coincidences.size - 1


def coincidence_matrix(U, K: int, r: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Coincidence counts for every row of ``U``.

    Returns ``C`` with ``C[b, i] = K_i`` of row ``b`` for ``i = 0..r`` and the
    per-row count of bins holding more than ``r`` values.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[None, :]
    B, N = U.shape
    bins = np.minimum((U * K).astype(np.int64), K - 1)
    bins.sort(axis=1)
    new_run = np.ones((B, N), dtype=bool)
    new_run[:, 1:] = bins[:, 1:] != bins[:, :-1]
    starts = np.flatnonzero(new_run.ravel())
    lengths = np.diff(np.append(starts, B * N))
    rows = starts // N
    full = np.bincount(rows * (N + 1) + lengths, minlength=B * (N + 1)).reshape(B, N + 1)
    full[:, 0] = K - np.bincount(rows, minlength=B)
    top = min(r, N)
    C = np.zeros((B, r + 1), dtype=np.int64)
    C[:, : top + 1] = full[:, : top + 1]
    remainder = full[:, top + 1 :].sum(axis=1)
    return C, remainder


def stratify(u, K: int, r: int = DEFAULT_ORDER) -> OccupancyProfile:
    """Quantize ``u`` (values strictly inside (0, 1)) into ``K`` bins."""
    if K < 2:
        raise DataError(f"need at least 2 bins, got {K}")
    u = check_unit_open(u)
    if u.ndim != 1:
        raise ShapeError("stratify takes one block; use coincidence_matrix for batches")
    bins = np.minimum((u * K).astype(np.int64), K - 1)
    counts = np.bincount(bins, minlength=K)
    C, rem = coincidence_matrix(u, K, r)
    return OccupancyProfile(K, u.size, counts, C[0], int(rem[0]))


# ---------------------------------------------------------------------------
# exact null law of K1


@lru_cache(maxsize=256)
def _k1_pmf_exact(N: int, K: int) -> tuple[Fraction, ...]:
    top = min(N, K)
    denom = K**N
    # falling factorial N!/(N-j)! times (K-j)^(N-j) times C(K, j)
    base = [comb(K, j) * perm(N, j) * (K - j) ** (N - j) for j in range(top + 1)]
    pmf = []
    for k in range(top + 1):
        num = 0
        for j in range(k, top + 1):
            term = comb(j, k) * base[j]
            num += term if (j + k) % 2 == 0 else -term
        pmf.append(Fraction(num, denom))
    return tuple(pmf)


def vonmises_pk(N: int, K: int, k: int, exact: bool = False):
    """Probability that exactly ``k`` of ``K`` bins hold a single value when
    ``N`` values are dropped uniformly at random.

    The alternating sum is evaluated with Python integers; ``exact=True``
    returns the ``Fraction`` itself.
    """
    N, K, k = int(N), int(K), int(k)
    if N < 1 or K < 1:
        raise DataError("N and K must be positive")
    if not 0 <= k <= min(N, K):
        raise DataError(f"k must lie in [0, min(N, K)] = [0, {min(N, K)}], got {k}")
    p = _k1_pmf_exact(N, K)[k]
    return p if exact else float(p)


def k1_pmf(N: int, K: int) -> np.ndarray:
    return np.array([float(p) for p in _k1_pmf_exact(int(N), int(K))])


def k1_cdf_exact(N: int, K: int) -> list[Fraction]:
    out, acc = [], Fraction(0)
    for p in _k1_pmf_exact(int(N), int(K)):
        acc += p
        out.append(acc)
    return out


def threshold(N: int, K: int, alpha: float) -> int:
    """Largest attainable ``k`` with ``Pr(K1 <= k; H0) <= alpha``.

    The K1 test rejects when ``K1 <= threshold``. Returns ``NEVER_REJECT`` when
    even the smallest attainable value carries more than ``alpha`` mass.
    """
    alpha = check_probability(alpha)
    a = Fraction(alpha)
    pmf = _k1_pmf_exact(int(N), int(K))
    best = NEVER_REJECT
    acc = Fraction(0)
    for k, p in enumerate(pmf):
        acc += p
        if acc > a:
            break
        if p > 0:
            best = k
    return best


# ---------------------------------------------------------------------------
# Monte Carlo null distributions


def _uniform_blocks(rng, n, N):
    u = rng.random((n, N))
    # rng.random can return exactly 0.0
    return np.where(u > 0.0, u, np.nextafter(0.0, 1.0))


def _alternative_blocks(rng, n, N, contamination=0.3, means=(0.3, 0.7), std=0.05):
    u = _uniform_blocks(rng, n, N)
    mask = rng.random((n, N)) < contamination
    comp = rng.integers(0, len(means), size=(n, N))
    g = np.asarray(means)[comp] + std * rng.standard_normal((n, N))
    g = np.clip(g, 1e-12, 1 - 1e-12)
    return np.where(mask, g, u)


def _statistic_fn(statistic, coeffs=None) -> Callable[[np.ndarray], np.ndarray]:
    if callable(statistic):
        return statistic
    if statistic == "k0":
        return lambda C: C[:, 0].astype(np.float64)
    if statistic == "k1":
        return lambda C: C[:, 1].astype(np.float64)
    if statistic == "vc":
        if coeffs is None:
            raise DataError("vc statistic needs coefficients")
        c = np.asarray(coeffs, dtype=np.float64)
        return lambda C: C[:, : c.size] @ c
    raise ValueError(f"unknown statistic {statistic!r}")


@dataclass(frozen=True)
class NullDistribution:
    """Empirical law of a statistic over i.i.d.-uniform blocks."""

    values: np.ndarray

    @property
    def trials(self) -> int:
        return self.values.size

    def pmf(self) -> tuple[np.ndarray, np.ndarray]:
        support, counts = np.unique(self.values, return_counts=True)
        return support, counts / self.values.size

    def quantile(self, q):
        return np.quantile(self.values, q, method="inverted_cdf")

    def upper_threshold(self, alpha: float) -> float:
        """Smallest value ``t`` with empirical ``Pr(S >= t) <= alpha`` (inf if none)."""
        support, counts = np.unique(self.values, return_counts=True)
        tail = np.cumsum(counts[::-1])[::-1] / self.values.size
        ok = np.flatnonzero(tail <= alpha)
        return float(support[ok[0]]) if ok.size else float("inf")

    def lower_threshold(self, alpha: float) -> float:
        """Largest value ``t`` with empirical ``Pr(S <= t) <= alpha`` (-inf if none)."""
        support, counts = np.unique(self.values, return_counts=True)
        head = np.cumsum(counts) / self.values.size
        ok = np.flatnonzero(head <= alpha)
        return float(support[ok[-1]]) if ok.size else float("-inf")


def null_mc(
    N: int,
    K: int,
    statistic="k1",
    trials: int = 100_000,
    seed=0,
    r: int = DEFAULT_ORDER,
    coeffs=None,
    chunk: int = 20_000,
) -> NullDistribution:
    """Score ``trials`` i.i.d.-uniform blocks with ``statistic``.

    ``statistic`` is "k0", "k1", "vc" (needs ``coeffs``) or a callable mapping a
    coincidence matrix to one score per row.
    """
    if trials < 1000:
        raise DataError("Monte Carlo calibration needs at least 1000 trials")
    fn = _statistic_fn(statistic, coeffs)
    rng = np.random.default_rng(seed)
    out = []
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        C, _ = coincidence_matrix(_uniform_blocks(rng, n, N), K, r)
        out.append(np.asarray(fn(C), dtype=np.float64))
        done += n
    return NullDistribution(np.concatenate(out))


def fit_vc_coefficients(
    N: int,
    K: int,
    r: int = DEFAULT_ORDER,
    seed=0,
    trials: int = 20_000,
    contamination: float = 0.3,
) -> np.ndarray:
    """Fisher-discriminant weights on ``(K_0, ..., K_r)``.

    Separates i.i.d.-uniform blocks from uniform blocks contaminated (fraction
    ``contamination``) by a two-bump Gaussian mixture at 0.3 and 0.7 with
    standard deviation 0.05. Oriented so that large scores are anomalous;
    returned with unit Euclidean norm.
    """
    if r > N:
        raise DataError(f"order r={r} exceeds block size N={N}")
    rng = np.random.default_rng(seed)
    C0, _ = coincidence_matrix(_uniform_blocks(rng, trials, N), K, r)
    C1, _ = coincidence_matrix(_alternative_blocks(rng, trials, N, contamination), K, r)
    X0 = C0.astype(np.float64)
    X1 = C1.astype(np.float64)
    diff = X1.mean(axis=0) - X0.mean(axis=0)
    pooled = 0.5 * (np.cov(X0, rowvar=False) + np.cov(X1, rowvar=False))
    pooled = np.atleast_2d(pooled) + 1e-6 * np.eye(r + 1)
    w = np.linalg.solve(pooled, diff)
    norm = np.linalg.norm(w)
    return w / norm if norm > 0 else w


# ---------------------------------------------------------------------------
# test specifications and verdicts


@dataclass(frozen=True)
class Verdict:
    label: str
    score: float
    threshold: float

    @property
    def is_anomaly(self) -> bool:
        return self.label == ANOMALY


@dataclass(frozen=True)
class TestSpec:
    """Everything needed to run one coincidence test on a profile.

    ``direction`` says which tail rejects: "lower" (K1, OC-SVM decision value)
    or "upper" (K0, fitted VC scores). A threshold of ``None`` never rejects.
    """

    variant: str
    N: int
    K: int
    alpha: float
    threshold: float | None
    direction: str = "lower"
    coeffs: tuple[float, ...] | None = None
    r: int = DEFAULT_ORDER
    combiner: object | None = field(default=None, compare=False)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        check_probability(self.alpha)
        if self.K < 2:
            raise DataError("K must be at least 2")
        if self.direction not in ("lower", "upper"):
            raise ValueError("direction must be 'lower' or 'upper'")

    def rejects(self, score: float) -> bool:
        if self.threshold is None:
            return False
        if self.direction == "lower":
            return score <= self.threshold
        return score >= self.threshold

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "N": self.N,
            "K": self.K,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "direction": self.direction,
            "r": self.r,
        }
        if self.coeffs is not None:
            out["coeffs"] = list(self.coeffs)
        if self.combiner is not None:
            out["combiner"] = self.combiner.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TestSpec":
        from .baselines import OneClassSVM

        combiner = obj.get("combiner")
        return cls(
            variant=obj["variant"],
            N=int(obj["N"]),
            K=int(obj["K"]),
            alpha=float(obj["alpha"]),
            threshold=obj.get("threshold"),
            direction=obj.get("direction", "lower"),
            coeffs=tuple(obj["coeffs"]) if obj.get("coeffs") is not None else None,
            r=int(obj.get("r", DEFAULT_ORDER)),
            combiner=OneClassSVM.from_dict(combiner) if combiner is not None else None,
        )


def _check_profile(profile: OccupancyProfile, spec: TestSpec, variant: str):
    if spec.variant != variant:
        raise ValueError(f"spec is for variant {spec.variant!r}, not {variant!r}")
    if profile.N != spec.N or profile.K != spec.K:
        raise ShapeError(
            f"profile (N={profile.N}, K={profile.K}) does not match spec (N={spec.N}, K={spec.K})"
        )


def _verdict(spec: TestSpec, score: float) -> Verdict:
    label = ANOMALY if spec.rejects(score) else ANOMALY_FREE
    thr = float("nan") if spec.threshold is None else float(spec.threshold)
    return Verdict(label, float(score), thr)


def k1_test(profile: OccupancyProfile, spec: TestSpec) -> Verdict:
    _check_profile(profile, spec, "k1")
    return _verdict(spec, profile.k1)


def k0_test(profile: OccupancyProfile, spec: TestSpec) -> Verdict:
    _check_profile(profile, spec, "k0")
    return _verdict(spec, profile.k0)


def _vc_score(coincidences: np.ndarray, coeffs) -> float:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.size > coincidences.size:
        raise ShapeError("more coefficients than coincidence orders in the profile")
    return float(coincidences[: c.size] @ c)


def vc_test(profile: OccupancyProfile, spec: TestSpec) -> Verdict:
    _check_profile(profile, spec, "vc")
    if spec.coeffs is None:
        raise DataError("vc test needs coefficients")
    return _verdict(spec, _vc_score(profile.coincidences, spec.coeffs))


def ocsvm_coincidence_test(profile: OccupancyProfile, spec: TestSpec) -> Verdict:
    _check_profile(profile, spec, "ocsvm")
    if spec.combiner is None:
        raise NotFittedError("ocsvm coincidence test needs a trained combiner")
    x = profile.coincidences[None, : spec.r + 1].astype(np.float64)
    return _verdict(spec, float(spec.combiner.decision_function(x)[0]))


_TESTS = {"k0": k0_test, "k1": k1_test, "vc": vc_test, "ocsvm": ocsvm_coincidence_test}


def run_test(profile: OccupancyProfile, spec: TestSpec) -> Verdict:
    return _TESTS[spec.variant](profile, spec)


def scores_from_coincidences(C: np.ndarray, spec: TestSpec) -> np.ndarray:
    """Vectorized test statistic for a coincidence matrix (natural units)."""
    if spec.variant == "k1":
        return C[:, 1].astype(np.float64)
    if spec.variant == "k0":
        return C[:, 0].astype(np.float64)
    if spec.variant == "vc":
        c = np.asarray(spec.coeffs, dtype=np.float64)
        return C[:, : c.size].astype(np.float64) @ c
    if spec.combiner is None:
        raise NotFittedError("ocsvm coincidence test needs a trained combiner")
    return spec.combiner.decision_function(C[:, : spec.r + 1].astype(np.float64))


def calibrate(
    variant: str,
    N: int,
    K: int | None = None,
    alpha: float = 0.05,
    r: int = DEFAULT_ORDER,
    coeffs=None,
    direction: str | None = None,
    combiner_data=None,
    nu: float = 0.1,
    trials: int = 100_000,
    seed=0,
) -> TestSpec:
    """Build a ``TestSpec`` with its size-``alpha`` threshold.

    K1 uses the exact null law. K0, VC and OC-SVM thresholds come from
    ``trials`` Monte Carlo blocks. Without explicit ``coeffs`` the VC weights are
    fitted by ``fit_vc_coefficients``. The OC-SVM combiner is trained on
    ``combiner_data`` (rows of ``K_0..K_r``) or, if absent, on simulated
    uniform blocks.
    """
    K = default_bins(N) if K is None else int(K)
    alpha = check_probability(alpha)
    if variant == "k1":
        return TestSpec("k1", N, K, alpha, threshold(N, K, alpha), "lower", r=r)

    if variant == "k0":
        spec = TestSpec("k0", N, K, alpha, None, "upper", r=r)
    elif variant == "vc":
        if coeffs is None:
            coeffs = fit_vc_coefficients(N, K, r, seed=seed)
            direction = direction or "upper"
        spec = TestSpec("vc", N, K, alpha, None, direction or "upper", tuple(float(c) for c in coeffs), r=r)
    elif variant == "ocsvm":
        from .baselines import OneClassSVM

        if combiner_data is None:
            rng = np.random.default_rng([int(seed), 1])
            combiner_data, _ = coincidence_matrix(_uniform_blocks(rng, 2000, N), K, r)
        X = np.asarray(combiner_data, dtype=np.float64)[:, : r + 1]
        combiner = OneClassSVM(nu=nu).fit(X)
        spec = TestSpec("ocsvm", N, K, alpha, None, "lower", r=r, combiner=combiner)
    else:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")

    return recalibrate(spec, alpha, trials, seed)


def recalibrate(spec: TestSpec, alpha: float, trials: int = 100_000, seed=0) -> TestSpec:
    """Same statistic (coefficients, combiner), new size-``alpha`` threshold."""
    alpha = check_probability(alpha)
    if spec.variant == "k1":
        return replace(spec, alpha=alpha, threshold=threshold(spec.N, spec.K, alpha))
    null = null_mc(spec.N, spec.K, lambda C: scores_from_coincidences(C, spec), trials, seed=seed, r=spec.r)
    if spec.direction == "upper":
        t = null.upper_threshold(alpha)
    else:
        t = null.lower_threshold(alpha)
    return replace(spec, alpha=alpha, threshold=t if np.isfinite(t) else None)


class CoincidenceTest(BaseEstimator):
    """Uniformity test on blocks of uniformized components.

    ``fit`` calibrates the rejection threshold (and, for "ocsvm", trains the
    combiner on the coincidence vectors of the anomaly-free rows of ``X``).
    Rows of ``X`` are blocks of ``N`` values in (0, 1).

    ``predict`` returns 1 for anomaly and 0 for anomaly-free. ``score_samples``
    gives the statistic in its natural units; ``anomaly_score`` flips it so
    that larger always means more anomalous.
    """

    def __init__(
        self,
        variant="k1",
        n_bins=None,
        alpha=0.05,
        max_order=DEFAULT_ORDER,
        coeffs=None,
        vc_direction=None,
        nu=0.1,
        n_trials=100_000,
        random_state=0,
    ):
        self.variant = variant
        self.n_bins = n_bins
        self.alpha = alpha
        self.max_order = max_order
        self.coeffs = coeffs
        self.vc_direction = vc_direction
        self.nu = nu
        self.n_trials = n_trials
        self.random_state = random_state

    def _coincidences(self, X) -> np.ndarray:
        X = check_unit_open(X, name="X")
        X = X[None, :] if X.ndim == 1 else X
        if hasattr(self, "spec_") and X.shape[1] != self.spec_.N:
            raise ShapeError(f"blocks must have {self.spec_.N} values, got {X.shape[1]}")
        K = self.spec_.K if hasattr(self, "spec_") else self._bins(X.shape[1])
        C, _ = coincidence_matrix(X, K, self.max_order)
        return C

    def _bins(self, N):
        return default_bins(N) if self.n_bins is None else int(self.n_bins)

    def fit(self, X, y=None):
        X = check_unit_open(X, name="X")
        X = X[None, :] if X.ndim == 1 else X
        N = X.shape[1]
        combiner_data = None
        if self.variant == "ocsvm" and X.shape[0] >= 10:
            combiner_data, _ = coincidence_matrix(X, self._bins(N), self.max_order)
        self.spec_ = calibrate(
            self.variant,
            N,
            self._bins(N),
            self.alpha,
            r=self.max_order,
            coeffs=self.coeffs,
            direction=self.vc_direction,
            combiner_data=combiner_data,
            nu=self.nu,
            trials=self.n_trials,
            seed=self.random_state,
        )
        return self

    @classmethod
    def from_spec(cls, spec: TestSpec) -> "CoincidenceTest":
        est = cls(variant=spec.variant, n_bins=spec.K, alpha=spec.alpha, max_order=spec.r,
                  coeffs=spec.coeffs, vc_direction=spec.direction)
        est.spec_ = spec
        return est

    def score_coincidences(self, C) -> np.ndarray:
        check_is_fitted(self, "spec_")
        return scores_from_coincidences(np.atleast_2d(C), self.spec_)

    def score_samples(self, X) -> np.ndarray:
        return self.score_coincidences(self._coincidences(X))

    def anomaly_score(self, X) -> np.ndarray:
        s = self.score_samples(X)
        return -s if self.spec_.direction == "lower" else s

    def predict(self, X) -> np.ndarray:
        s = self.score_samples(X)
        return np.array([1 if self.spec_.rejects(v) else 0 for v in s], dtype=np.int64)

    def verdicts(self, X) -> list[Verdict]:
        return [_verdict(self.spec_, v) for v in self.score_samples(X)]
