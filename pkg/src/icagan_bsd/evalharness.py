"""Contiguous train/val/test splits, conservative ROC curves and end-to-end
experiments on the synthetic grid benchmark.

Time is laid out as ``train | val | test_clean | test_anomaly``, each a run of
consecutive non-overlapping blocks. A block is scored together with the
``order`` samples preceding it (the whitener's history).
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import gridsim
from ._validation import as_float_array
from .baselines import OneClassSVM
from .exceptions import DataError
from .gridsim import AttackPlan, Gmm, GridModel, MeasurementSeries
from .pipeline import BadSequenceDetector, block_view
from .preprocess import fit_whitener, whiten

log = logging.getLogger(__name__)

ICAGAN_DETECTORS = {"icagan_k0": "k0", "icagan_k1": "k1", "icagan_vc": "vc", "icagan_ocsvm": "ocsvm"}
DETECTORS = (*ICAGAN_DETECTORS, "jx", "ocsvm")


@dataclass(frozen=True)
class SplitSpec:
    block: int = 80
    n_train: int = 250
    n_val: int = 100
    n_clean: int = 200
    n_anomaly: int = 200

    def __post_init__(self):
        if self.block < 1 or min(self.n_train, self.n_val, self.n_clean, self.n_anomaly) < 0:
            raise DataError("block length must be >= 1 and counts >= 0")

    @property
    def n_blocks(self) -> int:
        return self.n_train + self.n_val + self.n_clean + self.n_anomaly

    @property
    def required_length(self) -> int:
        return self.block * self.n_blocks

    def starts(self, region: str) -> np.ndarray:
        """Start indices of the blocks of one region."""
        order = ("train", "val", "test_clean", "test_anomaly")
        counts = (self.n_train, self.n_val, self.n_clean, self.n_anomaly)
        first = sum(counts[: order.index(region)])
        return self.block * (first + np.arange(counts[order.index(region)]))


FULL_SPLIT = SplitSpec(80, 600, 400, 500, 500)


@dataclass
class Split:
    spec: SplitSpec
    series: np.ndarray  # (T, m), corruption already applied to the anomaly region
    order: int

    @property
    def train(self) -> np.ndarray:
        return self.series[: self.spec.n_train * self.spec.block]

    @property
    def val(self) -> np.ndarray:
        """Validation region plus ``order`` samples of history."""
        s = self.spec.starts("val")
        if s.size == 0:
            return self.series[:0]
        return self.series[s[0] - self.order : s[-1] + self.spec.block]

    def blocks(self, region: str) -> np.ndarray:
        """Raw ``(n, order + block, m)`` blocks including history."""
        s = self.spec.starts(region)
        if region == "train":
            s = s[s >= self.order]
        return block_view(self.series, s - self.order, self.order + self.spec.block)


Injector = Callable[[np.ndarray, int, int, int], np.ndarray]


def split(series, spec: SplitSpec, seed=0, injector: Injector | None = None, order: int = 4) -> Split:
    """Partition a ``(T, m)`` series and corrupt every anomaly block.

    ``injector(values, t_start, t_len, seed)`` returns corrupted values; it is
    called once per anomaly block with a seed derived from ``seed``.
    """
    values = as_float_array(series, ndim=(1, 2), name="series")
    values = values[:, None] if values.ndim == 1 else values
    if values.shape[0] < spec.required_length:
        raise DataError(
            f"series has {values.shape[0]} samples; split needs at least {spec.required_length} per channel"
        )
    if spec.n_train and spec.n_train * spec.block <= order:
        raise DataError("training region shorter than the whitener history")
    values = values[: spec.required_length].copy()
    starts = spec.starts("test_anomaly")
    if starts.size:
        if injector is None:
            raise DataError("anomaly blocks requested without an injector")
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        seeds = ss.generate_state(starts.size)
        for s, sd in zip(starts, seeds):
            values = injector(values, int(s), spec.block, int(sd))
    return Split(spec, values, order)


# -- ROC --------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    threshold: np.ndarray  # flag "anomaly" when score >= threshold
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("threshold,fpr,tpr\n")
        for t, f, p in zip(self.threshold, self.fpr, self.tpr):
            buf.write(f"{float(t)!r},{float(f)!r},{float(p)!r}\n")
        return buf.getvalue()


def roc(clean_scores, anomaly_scores) -> RocCurve:
    """ROC of the rule ``score >= threshold`` over every distinct score.

    Higher scores mean more anomalous. The curve starts at (0, 0) with an
    infinite threshold; AUC is the trapezoid area (ties count one half).
    """
    neg = np.asarray(clean_scores, dtype=np.float64).ravel()
    pos = np.asarray(anomaly_scores, dtype=np.float64).ravel()
    if neg.size == 0 or pos.size == 0:
        raise DataError("ROC needs at least one score per class")
    if np.isnan(neg).any() or np.isnan(pos).any():
        raise DataError("scores contain NaN")
    thr = np.unique(np.concatenate([neg, pos]))[::-1]
    neg_sorted = np.sort(neg)
    pos_sorted = np.sort(pos)
    fp = neg.size - np.searchsorted(neg_sorted, thr, side="left")
    tp = pos.size - np.searchsorted(pos_sorted, thr, side="left")
    fpr = np.concatenate([[0.0], fp / neg.size])
    tpr = np.concatenate([[0.0], tp / pos.size])
    thr = np.concatenate([[np.inf], thr])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thr, fpr, tpr, auc)


def tpr_at_fpr(curve: RocCurve, fpr: float = 0.05) -> tuple[float, float]:
    """Largest TPR among operating points with FPR <= ``fpr`` and its threshold
    (step function, no interpolation)."""
    ok = np.flatnonzero(curve.fpr <= fpr + 1e-12)
    best = ok[np.argmax(curve.tpr[ok])]
    return float(curve.tpr[best]), float(curve.threshold[best])


# -- experiments --------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    grid: str = "bus4"
    case: int = 1
    detectors: tuple[str, ...] = ("icagan_k1", "icagan_vc", "jx")
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    alpha: float = 0.05
    window: int = 80
    n_components: int = 50
    hidden: tuple[int, ...] = (32, 32)
    disc_hidden: tuple[int, ...] | None = None
    n_iter: int = 2000
    eval_every: int = 100
    patience: int = 10
    lr: float = 1e-4
    gp_lambda: float = 0.1
    batch_size: int = 100
    n_critic: int = 10
    order: int = 4
    max_reference: int = 4999
    max_order: int = 15
    n_trials: int = 100_000
    nu: float = 0.1
    gmm: Gmm = field(default_factory=Gmm.symmetric)
    corrupt_channels: int | None = None  # Case 1; None: 4 of 10 (bus4), 6 otherwise
    phi: float = 0.999
    innovation: float = 1e-3

    def __post_init__(self):
        dets = tuple(self.detectors)
        if not dets:
            raise DataError("detector list is empty")
        unknown = [d for d in dets if d not in DETECTORS]
        if unknown:
            raise DataError(f"unknown detectors {unknown}; choose from {DETECTORS}")
        if self.case not in (1, 2):
            raise DataError("case must be 1 (bad data) or 2 (unobservable attack)")
        object.__setattr__(self, "detectors", dets)
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.disc_hidden is not None:
            object.__setattr__(self, "disc_hidden", tuple(self.disc_hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detectors"] = list(self.detectors)
        d["hidden"] = list(self.hidden)
        d["disc_hidden"] = None if self.disc_hidden is None else list(self.disc_hidden)
        d["gmm"] = self.gmm.to_dict()
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        if isinstance(kw.get("split"), dict):
            kw["split"] = SplitSpec(**kw["split"])
        if isinstance(kw.get("gmm"), dict):
            kw["gmm"] = Gmm.from_dict(kw["gmm"])
        return cls(**kw)

    def detector_params(self) -> dict:
        return dict(
            alpha=self.alpha, window=self.window, n_components=self.n_components,
            hidden=self.hidden, disc_hidden=self.disc_hidden, lr=self.lr,
            gp_lambda=self.gp_lambda, batch_size=self.batch_size, n_critic=self.n_critic,
            n_iter=self.n_iter, eval_every=self.eval_every, patience=self.patience,
            order=self.order, max_reference=self.max_reference, max_order=self.max_order, nu=self.nu,
            n_trials=self.n_trials, random_state=self.seed,
        )


def _seeds(seed: int) -> dict:
    sim, corrupt, plan = np.random.SeedSequence(seed).spawn(3)
    return {"sim": sim, "corrupt": corrupt, "plan": plan}


def make_injector(config: ExperimentConfig, model: GridModel) -> Injector:
    """Case 1: mixture noise (scaled by channel sigma) on a random channel
    subset. Case 2: an unobservable attack along a fresh random direction."""
    if config.case == 1:
        k = config.corrupt_channels
        if k is None:
            k = 4 if model.m == 10 else min(6, model.m)
        if not 1 <= k <= model.m:
            raise DataError(f"corrupt_channels must be in [1, {model.m}]")

        def inject(values, t0, length, seed):
            rng = np.random.default_rng(seed)
            chans = np.sort(rng.choice(model.m, size=k, replace=False))
            s = gridsim.inject_bad(MeasurementSeries(values), chans, config.gmm, t0, length,
                                   seed=rng, scale=model.sigma)
            return s.values
    else:
        def inject(values, t0, length, seed):
            rng = np.random.default_rng(seed)
            plan = AttackPlan.random(model, rng, config.gmm)
            s = gridsim.unobservable_attack(model, plan, MeasurementSeries(values), t0, length, seed=rng)
            return s.values
    return inject


def build_dataset(config: ExperimentConfig) -> tuple[GridModel, Split]:
    model = GridModel.load(config.grid)
    seeds = _seeds(config.seed)
    series = gridsim.simulate(model, config.split.required_length, seed=seeds["sim"],
                              phi=config.phi, innovation=config.innovation)
    data = split(series.values, config.split, seed=seeds["corrupt"],
                 injector=make_injector(config, model), order=config.order)
    return model, data


@dataclass
class Fitted:
    """Models trained on the anomaly-free regions; reusable across cases."""

    icagan: BadSequenceDetector | None = None
    ocsvm: list = field(default_factory=list)  # (whitener, OneClassSVM) per channel


def _raw_ocsvm_scores(fitted: Fitted, blocks: np.ndarray, window: int) -> np.ndarray:
    cols = []
    for ch, (w, svm) in enumerate(fitted.ocsvm):
        res = np.stack([whiten(w, b) / w.scale for b in blocks[:, :, ch]])
        cols.append(-svm.decision_function(res[:, -window:]))
    return np.max(np.column_stack(cols), axis=1)


def fit_detectors(config: ExperimentConfig, data: Split) -> Fitted:
    fitted = Fitted()
    if any(d in ICAGAN_DETECTORS for d in config.detectors):
        det = BadSequenceDetector(**config.detector_params())
        fitted.icagan = det.fit(data.train, X_val=data.val if config.split.n_val else None)
    if "ocsvm" in config.detectors:
        train = data.train
        for ch in range(train.shape[1]):
            w = fit_whitener(train[:, ch], config.order)
            res = whiten(w, train[:, ch]) / w.scale
            nb = res.size // config.window
            X = res[: nb * config.window].reshape(nb, config.window)
            fitted.ocsvm.append((w, OneClassSVM(nu=config.nu).fit(X)))
    return fitted


def score_blocks(config: ExperimentConfig, model: GridModel, fitted: Fitted, blocks: np.ndarray) -> dict:
    """Anomaly score per detector (larger = more anomalous) for raw blocks."""
    out = {}
    C = None
    for det in config.detectors:
        if det in ICAGAN_DETECTORS:
            if C is None:
                C = fitted.icagan.coincidences(blocks)
            out[det] = fitted.icagan.anomaly_score(variant=ICAGAN_DETECTORS[det], coincidences=C)
        elif det == "jx":
            out[det] = gridsim.block_j(model, blocks[:, config.order :, :])
        elif det == "ocsvm":
            out[det] = _raw_ocsvm_scores(fitted, blocks, config.window)
    return out


@dataclass
class Report:
    config: ExperimentConfig
    curves: dict
    summary: dict

    def write(self, out_dir) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "summary.json").write_text(json.dumps(self.summary, indent=1, sort_keys=True) + "\n")
        (d / "config.json").write_text(json.dumps(self.config.to_dict(), indent=1, sort_keys=True) + "\n")
        for det, curve in self.curves.items():
            (d / f"roc_{det}.csv").write_text(curve.to_csv())


def run_experiment(config: ExperimentConfig, out_dir=None, fitted: Fitted | None = None
                   ) -> tuple[Report, Fitted]:
    """Simulate, split, train, score every detector on the same test blocks.

    ``fitted`` reuses models from an earlier run with the same seed, grid and
    split (only the corruption case may differ). Failures are re-raised with
    the stage name and seed logged.
    """
    stage = "simulate"
    try:
        model, data = build_dataset(config)
        stage = "train"
        if fitted is None:
            fitted = fit_detectors(config, data)
        stage = "score"
        clean = score_blocks(config, model, fitted, data.blocks("test_clean"))
        anom = score_blocks(config, model, fitted, data.blocks("test_anomaly"))
    except Exception:
        log.error("experiment stage '%s' failed (seed=%d)", stage, config.seed)
        raise
    curves, summary = {}, {}
    for det in config.detectors:
        curve = roc(clean[det], anom[det])
        tpr, thr = tpr_at_fpr(curve, 0.05)
        curves[det] = curve
        summary[det] = {"auc": curve.auc, "tpr_at_005": tpr,
                        "threshold": thr if np.isfinite(thr) else None}
        log.info("%s: auc %.3f tpr@0.05 %.3f", det, curve.auc, tpr)
    report = Report(config, curves, summary)
    if out_dir is not None:
        report.write(out_dir)
    return report, fitted


def with_case(config: ExperimentConfig, case: int) -> ExperimentConfig:
    return replace(config, case=case)
