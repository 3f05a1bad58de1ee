"""Linearized (DC) grid measurements, corruption injectors and the classical
weighted-least-squares bad-data test.

Measurements follow ``z_t = H s_t + w_t`` with ``w_t ~ N(0, diag(sigma^2))``.
An attack ``a_t = w_t H delta`` lies in the column space of ``H``, so every
residual-based statistic is blind to it.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.signal import lfilter

from ._validation import as_float_array
from .exceptions import DataError, ShapeError
from .occupancy import ANOMALY, ANOMALY_FREE

FIXTURES = ("bus4", "bus30")


@dataclass(frozen=True)
class GridModel:
    H: np.ndarray  # (m, n)
    sigma: np.ndarray  # (m,)
    channels: tuple[str, ...]

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if H.ndim != 2 or sigma.shape != (H.shape[0],):
            raise ShapeError(f"H {H.shape} and sigma {sigma.shape} do not agree")
        if H.shape[0] < H.shape[1]:
            raise DataError("need at least as many measurements as states")
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise DataError("noise standard deviations must be positive")
        channels = tuple(self.channels) if self.channels else tuple(f"ch_{i}" for i in range(H.shape[0]))
        if len(channels) != H.shape[0]:
            raise ShapeError("one channel label per measurement row required")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "channels", channels)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    def is_observable(self) -> bool:
        return np.linalg.matrix_rank(self.H) == self.n

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "sigma": self.sigma.tolist(), "channels": list(self.channels)}

    @classmethod
    def from_dict(cls, obj: dict) -> "GridModel":
        return cls(np.array(obj["H"], float), np.array(obj["sigma"], float), tuple(obj.get("channels", ())))

    @classmethod
    def load(cls, path) -> "GridModel":
        """Read a grid JSON file. Names of shipped fixtures (``bus4``,
        ``fixtures/bus30.json``) resolve to the packaged copies when no such
        file exists on disk."""
        p = Path(path)
        if not p.exists():
            stem = p.name[:-5] if p.name.endswith(".json") else p.name
            if stem not in FIXTURES:
                raise DataError(f"grid file not found: {path}")
            text = resources.files("icagan_bsd").joinpath("fixtures").joinpath(f"{stem}.json").read_text()
        else:
            text = p.read_text()
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed grid file {path}: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def dc_model(n_bus: int, lines, susceptance, injection_buses=(), sigma=0.01, slack: int = 0) -> GridModel:
    """DC measurement matrix for line flows ``b_ij (theta_i - theta_j)`` on
    every line followed by net injections at ``injection_buses``; the slack
    bus angle is fixed at zero and dropped from the state."""
    lines = [tuple(map(int, ln)) for ln in lines]
    b = np.broadcast_to(np.asarray(susceptance, dtype=np.float64), (len(lines),))
    A = np.zeros((len(lines), n_bus))
    for k, (i, j) in enumerate(lines):
        A[k, i], A[k, j] = 1.0, -1.0
    flows = b[:, None] * A
    B_bus = A.T @ flows  # nodal susceptance (Laplacian)
    H = np.vstack([flows, B_bus[list(injection_buses)]])
    H = np.delete(H, slack, axis=1)
    labels = [f"P{i}-{j}" for i, j in lines] + [f"P{i}" for i in injection_buses]
    return GridModel(H, np.full(H.shape[0], float(sigma)), tuple(labels))


@dataclass(frozen=True)
class Gmm:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if not (len(self.weights) == len(self.means) == len(self.stds)) or w.size == 0:
            raise DataError("mixture needs matching, non-empty weights/means/stds")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError("mixture weights must be nonnegative and sum to 1")
        if np.any(np.asarray(self.stds, float) < 0):
            raise DataError("mixture standard deviations must be >= 0")
        for name in ("weights", "means", "stds"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @classmethod
    def symmetric(cls, offset: float = 5.0, std: float = 1.0) -> "Gmm":
        return cls((0.5, 0.5), (-offset, offset), (std, std))

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def var(self) -> float:
        w, mu, sd = (np.asarray(a) for a in (self.weights, self.means, self.stds))
        return float(np.dot(w, sd**2 + mu**2) - self.mean**2)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        z = rng.standard_normal(size)
        return np.asarray(self.means)[comp] + np.asarray(self.stds)[comp] * z

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "means": list(self.means), "stds": list(self.stds)}

    @classmethod
    def from_dict(cls, obj: dict) -> "Gmm":
        return cls(tuple(obj["weights"]), tuple(obj["means"]), tuple(obj["stds"]))


@dataclass(frozen=True)
class AttackPlan:
    delta: np.ndarray  # state-space direction, (n,)
    magnitude: Gmm

    @classmethod
    def random(cls, model: GridModel, rng: np.random.Generator, magnitude: Gmm | None = None) -> "AttackPlan":
        """Random direction scaled so the largest attacked channel moves by one
        noise standard deviation per unit of magnitude."""
        d = rng.standard_normal(model.n)
        d /= np.max(np.abs(model.H @ d) / model.sigma)
        return cls(d, magnitude or Gmm.symmetric())


@dataclass(frozen=True)
class MeasurementSeries:
    values: np.ndarray  # (T, m)
    channels: tuple[str, ...] = ()

    def __post_init__(self):
        v = as_float_array(self.values, ndim=2, name="values")
        ch = tuple(self.channels) or tuple(f"ch_{i}" for i in range(v.shape[1]))
        if len(ch) != v.shape[1]:
            raise ShapeError("one label per column required")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channels", ch)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        """Header ``t,ch_0,...``; ``t`` is the sample index, values in repr precision."""
        buf = io.StringIO()
        header = "t," + ",".join(f"ch_{i}" for i in range(self.m))
        data = np.column_stack([np.arange(self.T), self.values])
        fmt = ["%d"] + ["%.17g"] * self.m
        np.savetxt(buf, data, fmt=fmt, delimiter=",", header=header, comments="")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def from_csv(cls, path) -> "MeasurementSeries":
        p = Path(path)
        if not p.exists():
            raise DataError(f"measurement file not found: {path}")
        try:
            data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
        except ValueError as exc:
            raise DataError(f"malformed measurement CSV {path}: {exc}") from exc
        if data.shape[1] < 2:
            raise DataError("measurement CSV needs a t column and at least one channel")
        return cls(data[:, 1:])


def simulate(model: GridModel, T: int, seed=None, phi: float = 0.999, innovation: float = 1e-3,
             s0=None) -> MeasurementSeries:
    """Slow AR(1) states per bus angle plus Gaussian measurement noise.

    ``s0`` fixes the initial state; by default it is drawn from the stationary
    law of the state process.
    """
    if T < 1:
        raise DataError("T must be >= 1")
    rng = np.random.default_rng(seed)
    if s0 is None:
        s0 = rng.standard_normal(model.n) * innovation / np.sqrt(1.0 - phi**2) if phi < 1 else np.zeros(model.n)
    s0 = np.asarray(s0, dtype=np.float64)
    e = innovation * rng.standard_normal((T, model.n))
    e[0] += phi * s0
    S = lfilter([1.0], [1.0, -phi], e, axis=0)
    noise = rng.standard_normal((T, model.m)) * model.sigma
    return MeasurementSeries(S @ model.H.T + noise, model.channels)


def _window(series: MeasurementSeries, t_start: int, t_len: int) -> slice:
    if t_len < 1 or t_start < 0 or t_start + t_len > series.T:
        raise DataError(f"window [{t_start}, {t_start + t_len}) is not inside a series of length {series.T}")
    return slice(t_start, t_start + t_len)


def inject_bad(series: MeasurementSeries, channels, gmm: Gmm, t_start: int, t_len: int,
               seed=None, scale=None) -> MeasurementSeries:
    """Add i.i.d. mixture noise to ``channels`` over ``[t_start, t_start+t_len)``.

    ``scale`` (per-channel, e.g. the noise std) multiplies the mixture draws.
    """
    ch = [int(c) for c in np.atleast_1d(channels)]
    if not ch:
        raise DataError("empty channel list")
    if len(set(ch)) != len(ch):
        raise DataError("channel list contains duplicates")
    if min(ch) < 0 or max(ch) >= series.m:
        raise DataError(f"channel index out of range for {series.m} channels")
    win = _window(series, t_start, t_len)
    rng = np.random.default_rng(seed)
    noise = gmm.sample(rng, (t_len, len(ch)))
    if scale is not None:
        noise = noise * np.asarray(scale, dtype=np.float64)[ch]
    values = series.values.copy()
    values[win, ch] += noise
    return MeasurementSeries(values, series.channels)


def unobservable_attack(model: GridModel, plan: AttackPlan, series: MeasurementSeries,
                        t_start: int, t_len: int, seed=None) -> MeasurementSeries:
    """``z'_t = z_t + w_t H delta`` on the window with ``w_t`` drawn from the plan's mixture."""
    delta = np.asarray(plan.delta, dtype=np.float64)
    if delta.shape != (model.n,):
        raise ShapeError(f"attack direction must have {model.n} entries")
    if not np.any(delta):
        raise DataError("zero attack direction is vacuous")
    if series.m != model.m:
        raise ShapeError("series and model disagree on channel count")
    win = _window(series, t_start, t_len)
    w = plan.magnitude.sample(np.random.default_rng(seed), t_len)
    values = series.values.copy()
    values[win] += np.outer(w, model.H @ delta)
    return MeasurementSeries(values, series.channels)


def _weighted(model: GridModel, keep=None):
    idx = np.arange(model.m) if keep is None else np.asarray(keep)
    return model.H[idx] / model.sigma[idx, None], idx


def wls(model: GridModel, z, keep=None) -> np.ndarray:
    """Weighted least-squares state estimate for one measurement vector or a
    (T, m) block, optionally restricted to the ``keep`` channels."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.m:
        raise ShapeError(f"measurement vectors must have {model.m} entries")
    Hw, idx = _weighted(model, keep)
    if np.linalg.matrix_rank(Hw) < model.n:
        raise DataError("measurement set is unobservable (rank-deficient H)")
    zw = z[..., idx] / model.sigma[idx]
    P = np.linalg.solve(Hw.T @ Hw, Hw.T).T  # (m', n)
    return zw @ P


def residues(model: GridModel, z, xhat, keep=None) -> np.ndarray:
    """Normalized squared residuals ``((z - H xhat) / sigma)^2`` per channel."""
    z = np.asarray(z, dtype=np.float64)
    idx = np.arange(model.m) if keep is None else np.asarray(keep)
    r = (z[..., idx] - np.asarray(xhat) @ model.H[idx].T) / model.sigma[idx]
    return r * r


def jx(model: GridModel, z, xhat) -> float:
    """``J = sum ((z - H xhat) / sigma)^2``, summed over a block if 2-D."""
    return float(np.sum(residues(model, z, xhat)))


@dataclass(frozen=True)
class JxResult:
    label: str
    score: float  # J of the full channel set
    removed: tuple[int, ...]
    unobservable: bool = False


def jx_detect(model: GridModel, block, alpha: float = 0.05) -> JxResult:
    """Recursive block J(x) test.

    The block statistic (residues summed over time and channels) is compared
    with the chi-square ``1 - alpha`` quantile at ``(m' - n) * T_b`` degrees of
    freedom. On failure the channel with the largest total residue is removed
    and the test repeated, until the remaining set passes or loses
    observability. The block is an anomaly iff anything was removed.
    """
    Z = np.asarray(block, dtype=np.float64)
    Z = Z[None, :] if Z.ndim == 1 else Z
    if Z.ndim != 2 or Z.shape[1] != model.m:
        raise ShapeError(f"block must be (T_b, {model.m})")
    Tb = Z.shape[0]
    keep = list(range(model.m))
    removed: list[int] = []
    score = None
    while True:
        df = (len(keep) - model.n) * Tb
        try:
            if df <= 0:
                raise DataError("no redundancy left")
            xhat = wls(model, Z, keep)
        except DataError:
            return JxResult(ANOMALY, score, tuple(removed), unobservable=True)
        res = residues(model, Z, xhat, keep)
        J = float(res.sum())
        if score is None:
            score = J
        if J <= stats.chi2.ppf(1.0 - alpha, df):
            return JxResult(ANOMALY if removed else ANOMALY_FREE, score, tuple(removed))
        worst = keep[int(np.argmax(res.sum(axis=0)))]
        removed.append(worst)
        keep.remove(worst)


def block_j(model: GridModel, blocks) -> np.ndarray:
    """Block J statistic for a stack of blocks ``(n_blocks, T_b, m)``."""
    Z = np.asarray(blocks, dtype=np.float64)
    xhat = wls(model, Z)
    return residues(model, Z, xhat).sum(axis=(1, 2))
