"""ICA-GAN: a generator mapping M-sample windows to N components that a
Wasserstein critic (with gradient penalty) cannot tell apart from i.i.d.
uniform(0, 1) vectors.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import occupancy
from ._validation import check_windows, sliding_windows
from .exceptions import DataError, NumericalError, ShapeError
from .preprocess import apply_ecdf, fit_ecdf
from .tensorcore import (
    AdamState,
    Gradients,
    MlpParams,
    adam_step,
    backward,
    forward,
    init_mlp,
    penalty_terms,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    gp_lambda: float = 0.1
    batch_size: int = 100
    n_critic: int = 10
    window: int = 80
    n_components: int = 50
    n_iter: int = 5000
    hidden: tuple[int, ...] = (100, 100, 100)
    disc_hidden: tuple[int, ...] | None = None  # defaults to ``hidden``
    seed: int = 0
    eval_every: int = 100
    patience: int = 10
    val_alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.disc_hidden is not None:
            object.__setattr__(self, "disc_hidden", tuple(int(h) for h in self.disc_hidden))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.gp_lambda < 0:
            raise ValueError("gp_lambda must be >= 0")
        if self.batch_size < 1 or self.n_critic < 1 or self.window < 1:
            raise ValueError("batch_size, n_critic and window must be >= 1")
        if not 1 <= self.n_components <= self.window:
            raise ValueError(
                f"n_components must be in [1, window={self.window}], got {self.n_components}"
            )
        if self.n_iter < 0 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("n_iter >= 0, eval_every >= 1 and patience >= 1 required")

    @property
    def generator_sizes(self) -> list[int]:
        return [self.window, *self.hidden, self.n_components]

    @property
    def discriminator_sizes(self) -> list[int]:
        hidden = self.hidden if self.disc_hidden is None else self.disc_hidden
        return [self.n_components, *hidden, 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["disc_hidden"] = None if self.disc_hidden is None else list(self.disc_hidden)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class TrainReport:
    disc_loss: np.ndarray
    gen_loss: np.ndarray
    wall_clock: np.ndarray  # seconds since start, after each iteration
    generator: MlpParams
    discriminator: MlpParams
    val_history: list = field(default_factory=list)  # (iteration, pass rate)
    best_iter: int = 0

    @property
    def n_iter(self) -> int:
        return int(self.disc_loss.size)


def init(config: TrainConfig, seed=None) -> tuple[MlpParams, MlpParams]:
    """Fresh generator (M -> N) and discriminator (N -> 1)."""
    ss = np.random.SeedSequence(config.seed if seed is None else seed)
    g_seed, d_seed = ss.spawn(2)
    gen = init_mlp(config.generator_sizes, np.random.default_rng(g_seed))
    disc = init_mlp(config.discriminator_sizes, np.random.default_rng(d_seed))
    return gen, disc


def _batch(x, width, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"{name} must be a non-empty 2-D batch")
    if x.shape[1] != width:
        raise ShapeError(f"{name} rows must have length {width}, got {x.shape[1]}")
    return x


def _params_only(g: Gradients) -> Gradients:
    return Gradients(g.weights, g.biases, None)


def disc_loss(gen: MlpParams, disc: MlpParams, Z, U, eps, lam: float) -> tuple[float, Gradients]:
    """Critic loss ``mean f(g(Z)) - mean f(U) + mean penalty(U_hat)`` and its
    gradient with respect to the critic parameters only."""
    Z = _batch(Z, gen.in_dim, "Z")
    U = _batch(U, gen.out_dim, "U")
    if U.shape[0] != Z.shape[0]:
        raise ShapeError("Z and U batches differ in size")
    B = Z.shape[0]
    eps = np.asarray(eps, dtype=np.float64).reshape(B, 1)
    fake, _ = forward(gen, Z)
    f_fake, c_fake = forward(disc, fake)
    f_real, c_real = forward(disc, U)
    u_hat = eps * U + (1.0 - eps) * fake
    pen, g_pen = penalty_terms(disc, u_hat, lam, row_weight=1.0 / B)
    loss = float(f_fake.mean() - f_real.mean() + pen.mean())
    grads = (
        _params_only(backward(disc, c_fake, np.full_like(f_fake, 1.0 / B)))
        + _params_only(backward(disc, c_real, np.full_like(f_real, -1.0 / B)))
        + g_pen
    )
    return loss, grads


def gen_loss(gen: MlpParams, disc: MlpParams, Z) -> tuple[float, Gradients]:
    """Generator loss ``-mean f(g(Z))`` and its gradient w.r.t. the generator."""
    Z = _batch(Z, gen.in_dim, "Z")
    B = Z.shape[0]
    fake, g_cache = forward(gen, Z)
    f_fake, d_cache = forward(disc, fake)
    upstream = backward(disc, d_cache, np.full_like(f_fake, -1.0 / B)).input
    return float(-f_fake.mean()), _params_only(backward(gen, g_cache, upstream))


def transform(gen: MlpParams, windows) -> np.ndarray:
    """Generator forward pass on one window (M-vector) or a batch of rows."""
    x = np.asarray(windows, dtype=np.float64)
    if x.shape[-1] != gen.in_dim or x.ndim not in (1, 2):
        raise ShapeError(f"window length must be {gen.in_dim}, got shape {x.shape}")
    return forward(gen, x)[0]


def uniformity_pass_rate(gen: MlpParams, ref_windows, val_windows, alpha: float = 0.05,
                         max_reference: int = 4999) -> float:
    """Fraction of validation windows whose ECDF-mapped components pass the K1
    test, with the ECDF fitted on generator outputs of ``ref_windows``."""
    ecdf = fit_ecdf(transform(gen, ref_windows), max_reference)
    U = apply_ecdf(ecdf, transform(gen, val_windows))
    N = gen.out_dim
    K = occupancy.default_bins(N)
    T = occupancy.threshold(N, K, alpha)
    C, _ = occupancy.coincidence_matrix(U, K, r=1)
    return float(np.mean(C[:, 1] > T))


def _train_windows(windows: np.ndarray, config: TrainConfig, val_windows=None,
                   gen: MlpParams | None = None, disc: MlpParams | None = None) -> TrainReport:
    n_win = windows.shape[0]
    if n_win < 1:
        raise DataError("no training windows")
    ss = np.random.SeedSequence(config.seed)
    rng = np.random.default_rng(ss.spawn(3)[2])
    g0, d0 = init(config)
    gen = g0 if gen is None else gen
    disc = d0 if disc is None else disc
    g_state = AdamState.zeros(gen)
    d_state = AdamState.zeros(disc)
    B, N, c = config.batch_size, config.n_components, config.n_critic

    d_hist = np.empty(config.n_iter)
    g_hist = np.empty(config.n_iter)
    clock = np.empty(config.n_iter)
    history = []
    best = (-1.0, 0, gen)
    stale = 0
    ref = None
    if val_windows is not None:
        step = max(1, n_win // 5000)
        ref = windows[::step]
    t0 = time.perf_counter()
    n_done = config.n_iter
    for it in range(config.n_iter):
        acc = 0.0
        for _ in range(c):
            Z = windows[rng.integers(0, n_win, B)]
            U = rng.random((B, N))
            eps = rng.random((B, 1))
            loss, grads = disc_loss(gen, disc, Z, U, eps, config.gp_lambda)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite discriminator loss at iteration {it}")
            disc, d_state = adam_step(disc, grads, d_state, config.lr)
            acc += loss
        Z = windows[rng.integers(0, n_win, B)]
        loss, grads = gen_loss(gen, disc, Z)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite generator loss at iteration {it}")
        gen, g_state = adam_step(gen, grads, g_state, config.lr)
        d_hist[it] = acc / c
        g_hist[it] = loss
        clock[it] = time.perf_counter() - t0

        if ref is not None and (it + 1) % config.eval_every == 0:
            rate = uniformity_pass_rate(gen, ref, val_windows, config.val_alpha)
            history.append((it + 1, rate))
            log.debug("iter %d: disc %.4g gen %.4g val pass %.3f", it + 1, d_hist[it], loss, rate)
            # ties move the checkpoint forward but do not reset patience
            stale = 0 if rate > best[0] else stale + 1
            if rate >= best[0]:
                best = (rate, it + 1, gen)
            if stale >= config.patience:
                n_done = it + 1
                break

    final_gen, best_iter = gen, n_done
    if best[0] >= 0:
        final_gen, best_iter = best[2], best[1]
    return TrainReport(d_hist[:n_done].copy(), g_hist[:n_done].copy(), clock[:n_done].copy(),
                       final_gen, disc, history, best_iter)


def train(series, config: TrainConfig, val_series=None) -> TrainReport:
    """WGAN-GP training on a whitened 1-D series.

    Each outer iteration runs ``n_critic`` critic batches then one generator
    batch; windows are drawn with replacement over all valid start times. With
    ``val_series`` the K1 pass rate of its non-overlapping blocks is checked
    every ``eval_every`` iterations, training stops after ``patience``
    evaluations without improvement, and the best generator is returned.
    """
    windows = sliding_windows(series, config.window)
    if windows.shape[0] - 1 < config.batch_size:
        raise DataError(
            f"series needs at least window + batch_size = {config.window + config.batch_size} samples"
        )
    val = None
    if val_series is not None:
        v = np.asarray(val_series, dtype=np.float64)
        n_blocks = v.size // config.window
        if n_blocks < 1:
            raise DataError("validation series shorter than one window")
        val = v[: n_blocks * config.window].reshape(n_blocks, config.window)
    return _train_windows(windows, config, val)


class IcaGan(TransformerMixin, BaseEstimator):
    """ICA-GAN generator as a transformer from window rows to component rows.

    ``fit`` takes whitened anomaly-free windows (one per row, e.g. every
    sliding window of a series); ``X_val`` holds validation windows used for
    early stopping on the K1 pass rate.
    """

    def __init__(self, window=80, n_components=50, hidden=(100, 100, 100), disc_hidden=None,
                 lr=1e-4, gp_lambda=0.1, batch_size=100, n_critic=10, n_iter=5000,
                 eval_every=100, patience=10, random_state=0):
        self.window = window
        self.n_components = n_components
        self.hidden = hidden
        self.disc_hidden = disc_hidden
        self.lr = lr
        self.gp_lambda = gp_lambda
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.n_iter = n_iter
        self.eval_every = eval_every
        self.patience = patience
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, gp_lambda=self.gp_lambda, batch_size=self.batch_size,
            n_critic=self.n_critic, window=self.window, n_components=self.n_components,
            n_iter=self.n_iter, hidden=tuple(self.hidden),
            disc_hidden=None if self.disc_hidden is None else tuple(self.disc_hidden),
            seed=int(self.random_state), eval_every=self.eval_every, patience=self.patience,
        )

    def fit(self, X, y=None, X_val=None):
        config = self._config()
        X = check_windows(X, config.window, "X")
        val = None if X_val is None else check_windows(X_val, config.window, "X_val")
        report = _train_windows(X, config, val)
        self.generator_ = report.generator
        self.discriminator_ = report.discriminator
        self.report_ = report
        self.n_features_in_ = config.window
        return self

    def transform(self, X):
        check_is_fitted(self, "generator_")
        return transform(self.generator_, check_windows(X, self.window, "X"))
