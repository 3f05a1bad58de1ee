"""Per-channel bad-sequence detector: whiten -> ICA-GAN generator -> ECDF ->
coincidence test, with system verdicts formed by OR over channels.

A model bundle is a directory::

    manifest.json          training config, seed, calibrated tests per channel
    ch_<i>/generator.json  ch_<i>/discriminator.json
    ch_<i>/whitener.json   ch_<i>/ecdf.json
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gan, occupancy
from ._validation import as_float_array, check_probability, sliding_windows
from .exceptions import DataError, ShapeError
from .preprocess import EcdfModel, Whitener, apply_ecdf, fit_ecdf, fit_whitener, whiten
from .tensorcore import MlpParams, load_params, save_params

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class ChannelModel:
    whitener: Whitener
    generator: MlpParams
    discriminator: MlpParams
    ecdf: EcdfModel

    @property
    def window(self) -> int:
        return self.generator.in_dim

    @property
    def order(self) -> int:
        return self.whitener.order

    def residuals(self, raw) -> np.ndarray:
        """Whitened, standardized residuals of a raw 1-D series."""
        return whiten(self.whitener, raw) / self.whitener.scale

    def components(self, residual_blocks) -> np.ndarray:
        """ECDF-mapped generator outputs for rows of ``window`` residuals."""
        return apply_ecdf(self.ecdf, gan.transform(self.generator, residual_blocks))

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(self.generator, d / "generator.json")
        save_params(self.discriminator, d / "discriminator.json")
        (d / "whitener.json").write_text(json.dumps(self.whitener.to_dict()))
        (d / "ecdf.json").write_text(json.dumps(self.ecdf.to_dict()))

    @classmethod
    def load(cls, directory) -> "ChannelModel":
        d = Path(directory)
        return cls(
            Whitener.from_dict(json.loads((d / "whitener.json").read_text())),
            load_params(d / "generator.json"),
            load_params(d / "discriminator.json"),
            EcdfModel.from_dict(json.loads((d / "ecdf.json").read_text())),
        )


def fit_channel(raw_train, config: gan.TrainConfig, raw_val=None, order: int = 4,
                max_reference: int | None = 4999) -> tuple[ChannelModel, gan.TrainReport]:
    """Fit the whitener, train the generator on every sliding window of the
    standardized residuals, then fit the ECDF on the generator outputs."""
    w = fit_whitener(raw_train, order)
    res = whiten(w, raw_train) / w.scale
    windows = sliding_windows(res, config.window)
    val = None
    if raw_val is not None:
        v = whiten(w, raw_val) / w.scale
        n_blocks = v.size // config.window
        if n_blocks < 1:
            raise DataError("validation data shorter than one window")
        val = v[: n_blocks * config.window].reshape(n_blocks, config.window)
    report = gan._train_windows(windows, config, val)
    ecdf = fit_ecdf(gan.transform(report.generator, windows), max_reference)
    return ChannelModel(w, report.generator, report.discriminator, ecdf), report


def block_view(series, starts, length: int) -> np.ndarray:
    """Rows ``series[s : s + length]`` for every start (1-D or (T, m) series)."""
    x = np.asarray(series)
    idx = np.asarray(starts)[:, None] + np.arange(length)[None, :]
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DataError("block reaches outside the series")
    return x[idx]


class BadSequenceDetector(BaseEstimator):
    """Multi-channel ICA-GAN bad-sequence detector.

    ``fit`` takes anomaly-free raw measurements ``(T, m)``; one whitener,
    generator and ECDF is trained per channel. A block to score carries the
    ``order`` samples preceding the window, i.e. ``(window + order, m)`` raw
    values. Anomaly scores are oriented so that larger means more anomalous; the
    system score is the maximum over channels (OR rule).
    """

    def __init__(self, variant="k1", alpha=0.05, window=80, n_components=50,
                 hidden=(100, 100, 100), disc_hidden=None, lr=1e-4, gp_lambda=0.1,
                 batch_size=100, n_critic=10, n_iter=5000, eval_every=100, patience=10,
                 order=4, max_reference=4999, n_bins=None, max_order=occupancy.DEFAULT_ORDER,
                 nu=0.1, n_trials=100_000, random_state=0):
        self.variant = variant
        self.alpha = alpha
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
        self.order = order
        self.max_reference = max_reference
        self.n_bins = n_bins
        self.max_order = max_order
        self.nu = nu
        self.n_trials = n_trials
        self.random_state = random_state

    # -- configuration -------------------------------------------------
    def train_config(self, channel: int = 0) -> gan.TrainConfig:
        return gan.TrainConfig(
            lr=self.lr, gp_lambda=self.gp_lambda, batch_size=self.batch_size,
            n_critic=self.n_critic, window=self.window, n_components=self.n_components,
            n_iter=self.n_iter, hidden=tuple(self.hidden),
            disc_hidden=None if self.disc_hidden is None else tuple(self.disc_hidden),
            seed=int(np.random.SeedSequence([int(self.random_state), channel]).generate_state(1)[0]),
            eval_every=self.eval_every, patience=self.patience,
        )

    @property
    def block_length(self) -> int:
        return self.window + self.order

    def _bins(self) -> int:
        return occupancy.default_bins(self.n_components) if self.n_bins is None else int(self.n_bins)

    # -- fitting --------------------------------------------------------
    def fit(self, X, y=None, X_val=None):
        X = as_float_array(X, ndim=2, name="X")
        check_probability(self.alpha)
        if self.variant not in occupancy.VARIANTS:
            raise ValueError(f"variant must be one of {occupancy.VARIANTS}")
        V = None if X_val is None else as_float_array(X_val, ndim=2, name="X_val")
        if V is not None and V.shape[1] != X.shape[1]:
            raise ShapeError("X and X_val differ in channel count")
        models, reports = [], []
        for ch in range(X.shape[1]):
            model, report = fit_channel(
                X[:, ch], self.train_config(ch), None if V is None else V[:, ch],
                self.order, self.max_reference,
            )
            log.info("channel %d: %d iterations, best at %d", ch, report.n_iter, report.best_iter)
            models.append(model)
            reports.append(report)
        self.channels_ = models
        self.reports_ = reports
        self.n_features_in_ = X.shape[1]
        self.tests_ = self._calibrate_all(V)
        return self

    def _calibrate_all(self, V) -> list[dict]:
        N, K, r = self.n_components, self._bins(), self.max_order
        seed = int(self.random_state)
        shared = {
            v: occupancy.calibrate(v, N, K, self.alpha, r=r, trials=self.n_trials, seed=seed)
            for v in ("k0", "k1", "vc")
        }
        tests = []
        for ch, model in enumerate(self.channels_):
            combiner_data = None
            if V is not None:
                res = model.residuals(V[:, ch])
                nb = res.size // self.window
                if nb >= 10:
                    U = model.components(res[: nb * self.window].reshape(nb, self.window))
                    combiner_data, _ = occupancy.coincidence_matrix(U, K, r)
            oc = occupancy.calibrate("ocsvm", N, K, self.alpha, r=r, combiner_data=combiner_data,
                                     nu=self.nu, trials=self.n_trials, seed=seed)
            tests.append({**shared, "ocsvm": oc})
        return tests

    def with_alpha(self, alpha: float) -> "BadSequenceDetector":
        """Copy with every test recalibrated to size ``alpha``."""
        check_is_fitted(self, "channels_")
        out = self.__class__(**{**self.get_params(), "alpha": alpha})
        out.channels_ = self.channels_
        out.reports_ = getattr(self, "reports_", None)
        out.n_features_in_ = self.n_features_in_
        seed = int(self.random_state)
        # k0/k1/vc depend only on (N, K), the combiner is per channel
        shared = {v: occupancy.recalibrate(self.tests_[0][v], alpha, self.n_trials, seed)
                  for v in ("k0", "k1", "vc")}
        tests = [
            {**shared, "ocsvm": occupancy.recalibrate(t["ocsvm"], alpha, self.n_trials, seed)}
            for t in self.tests_
        ]
        out.tests_ = tests
        return out

    # -- scoring ----------------------------------------------------------
    def _blocks(self, blocks) -> np.ndarray:
        B = as_float_array(blocks, ndim=(2, 3), name="blocks")
        B = B[None] if B.ndim == 2 else B
        if B.shape[1] != self.block_length or B.shape[2] != self.n_features_in_:
            raise ShapeError(
                f"blocks must be ({self.block_length}, {self.n_features_in_}) raw samples, got {B.shape[1:]}"
            )
        return B

    def coincidences(self, blocks) -> np.ndarray:
        """Coincidence vectors ``(n_blocks, m, r + 1)`` of raw blocks."""
        check_is_fitted(self, "channels_")
        B = self._blocks(blocks)
        K, r = self._bins(), self.max_order
        out = []
        for ch, model in enumerate(self.channels_):
            res = np.stack([model.residuals(b) for b in B[:, :, ch]])
            C, _ = occupancy.coincidence_matrix(model.components(res), K, r)
            out.append(C)
        return np.stack(out, axis=1)

    def channel_scores(self, blocks=None, variant=None, coincidences=None) -> np.ndarray:
        """Oriented anomaly scores ``(n_blocks, m)``; larger is more anomalous."""
        check_is_fitted(self, "channels_")
        variant = variant or self.variant
        C = self.coincidences(blocks) if coincidences is None else coincidences
        cols = []
        for ch in range(C.shape[1]):
            spec = self.tests_[ch][variant]
            s = occupancy.scores_from_coincidences(C[:, ch], spec)
            cols.append(-s if spec.direction == "lower" else s)
        return np.column_stack(cols)

    def anomaly_score(self, blocks=None, variant=None, coincidences=None) -> np.ndarray:
        return self.channel_scores(blocks, variant, coincidences).max(axis=1)

    def channel_verdicts(self, blocks=None, variant=None, coincidences=None) -> np.ndarray:
        """Boolean ``(n_blocks, m)``: channel rejects uniformity at the fitted size."""
        variant = variant or self.variant
        C = self.coincidences(blocks) if coincidences is None else coincidences
        out = np.zeros(C.shape[:2], dtype=bool)
        for ch in range(C.shape[1]):
            spec = self.tests_[ch][variant]
            s = occupancy.scores_from_coincidences(C[:, ch], spec)
            out[:, ch] = [spec.rejects(v) for v in s]
        return out

    def predict(self, blocks, variant=None) -> np.ndarray:
        """1 if any channel flags the block, else 0."""
        return self.channel_verdicts(blocks, variant).any(axis=1).astype(int)

    # -- persistence -------------------------------------------------------
    def save(self, directory) -> None:
        check_is_fitted(self, "channels_")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for ch, model in enumerate(self.channels_):
            model.save(d / f"ch_{ch}")
        params = self.get_params()
        params["hidden"] = list(params["hidden"])
        if params["disc_hidden"] is not None:
            params["disc_hidden"] = list(params["disc_hidden"])
        manifest = {
            "version": BUNDLE_VERSION,
            "params": params,
            "n_channels": self.n_features_in_,
            "train_configs": [self.train_config(ch).to_dict() for ch in range(self.n_features_in_)],
            "training": [
                {"iterations": r.n_iter, "best_iter": r.best_iter} for r in (self.reports_ or [])
            ],
            "tests": [{v: spec.to_dict() for v, spec in t.items()} for t in self.tests_],
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "BadSequenceDetector":
        d = Path(directory)
        path = d / "manifest.json"
        if not path.exists():
            raise DataError(f"no model bundle at {directory} (manifest.json missing)")
        try:
            manifest = json.loads(path.read_text())
            params = dict(manifest["params"])
            params["hidden"] = tuple(params["hidden"])
            if params.get("disc_hidden") is not None:
                params["disc_hidden"] = tuple(params["disc_hidden"])
            est = cls(**params)
            m = int(manifest["n_channels"])
            est.channels_ = [ChannelModel.load(d / f"ch_{ch}") for ch in range(m)]
            est.tests_ = [
                {v: occupancy.TestSpec.from_dict(spec) for v, spec in t.items()} for t in manifest["tests"]
            ]
        except (KeyError, TypeError, ValueError, FileNotFoundError) as exc:
            raise DataError(f"malformed model bundle {directory}: {exc}") from exc
        est.reports_ = None
        est.n_features_in_ = m
        return est
