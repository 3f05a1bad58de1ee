"""Command-line entry point: simulate, train, detect, eval, calibrate.

Exit codes: 0 success, 1 usage error, 2 data or model error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from sklearn.exceptions import NotFittedError

from . import evalharness, gridsim, occupancy
from .exceptions import DataError, NumericalError, ShapeError
from .pipeline import BadSequenceDetector

log = logging.getLogger("icagan_bsd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"config {path} must hold a JSON object")
    return obj


def _log_config(name: str, cfg: dict) -> None:
    log.info("effective %s config: %s", name, json.dumps(cfg, sort_keys=True))


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _check_out_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise DataError(f"output path {path} exists and is not a directory")
    return p


# -- subcommands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    grid = gridsim.GridModel.load(args.grid)
    if args.T < 1:
        raise UsageError("--T must be >= 1")
    cfg = {"grid": args.grid, "T": args.T, "seed": args.seed, "phi": args.phi,
           "innovation": args.innovation, "out": str(args.out)}
    _log_config("simulate", cfg)
    series = gridsim.simulate(grid, args.T, seed=args.seed, phi=args.phi, innovation=args.innovation)
    series.to_csv(args.out)
    return EXIT_OK


_TRAIN_KEYS = {
    "alpha": "alpha", "M": "window", "N": "n_components", "K": "n_bins", "variant": "variant",
    "seed": "random_state", "iters": "n_iter", "hidden": "hidden", "order": "order",
    "trials": "n_trials",
}


def cmd_train(args) -> int:
    params = BadSequenceDetector().get_params()
    if args.config:
        file_cfg = _read_json(args.config)
        unknown = set(file_cfg) - set(params)
        if unknown:
            raise UsageError(f"unknown training config keys: {sorted(unknown)}")
        params.update(file_cfg)
    for flag, key in _TRAIN_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            params[key] = value
    params["hidden"] = list(params["hidden"])
    if not 0.0 <= args.val_fraction < 1.0:
        raise UsageError("--val-fraction must be in [0, 1)")
    out = _check_out_dir(args.out)
    series = gridsim.MeasurementSeries.from_csv(args.data)
    _log_config("train", {**params, "data": str(args.data), "val_fraction": args.val_fraction})

    X = series.values
    n_val = int(round(args.val_fraction * X.shape[0]))
    X_val = X[X.shape[0] - n_val - params["order"] :] if n_val else None
    X_train = X[: X.shape[0] - n_val]
    det = BadSequenceDetector(**{**params, "hidden": tuple(params["hidden"])})
    det.fit(X_train, X_val=X_val)
    det.save(out)
    (out / "config.json").write_text(
        json.dumps({**params, "data": str(args.data), "val_fraction": args.val_fraction},
                   indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_detect(args) -> int:
    det = BadSequenceDetector.load(args.model)
    variant = args.variant or det.variant
    if variant not in occupancy.VARIANTS:
        raise UsageError(f"--variant must be one of {occupancy.VARIANTS}")
    if args.alpha is not None and args.alpha != det.alpha:
        det = det.with_alpha(args.alpha)
    _log_config("detect", {"model": str(args.model), "in": str(args.input), "variant": variant,
                           "alpha": det.alpha})
    values = gridsim.MeasurementSeries.from_csv(args.input).values
    if values.shape[1] != det.n_features_in_:
        raise ShapeError(f"input has {values.shape[1]} channels, model expects {det.n_features_in_}")
    L, p, M = det.block_length, det.order, det.window
    if values.shape[0] < L:
        raise DataError(f"need at least {L} samples ({p} history + {M} window), got {values.shape[0]}")
    n_blocks = (values.shape[0] - p) // M
    starts = np.arange(n_blocks) * M
    blocks = np.stack([values[s : s + L] for s in starts])
    C = det.coincidences(blocks)
    scores = det.anomaly_score(variant=variant, coincidences=C)
    flags = det.channel_verdicts(variant=variant, coincidences=C).any(axis=1)
    for flag, score in zip(flags, scores):
        label = occupancy.ANOMALY if flag else occupancy.ANOMALY_FREE
        print(f"{label} {float(score)!r}")
    return EXIT_OK


_EVAL_FLAGS = ("seed", "case", "alpha", "grid")


def cmd_eval(args) -> int:
    obj = _read_json(args.config) if args.config else {}
    for key in _EVAL_FLAGS:
        value = getattr(args, key)
        if value is not None:
            obj[key] = value
    if args.detectors is not None:
        obj["detectors"] = [d for d in args.detectors.split(",") if d]
    try:
        cfg = evalharness.ExperimentConfig.from_dict(obj)
    except TypeError as exc:
        raise UsageError(f"bad experiment config: {exc}") from exc
    out = _check_out_dir(args.out or Path(args.config or ".").with_suffix("").name + "_report")
    _log_config("eval", cfg.to_dict())
    report, _ = evalharness.run_experiment(cfg, out)
    for det, row in report.summary.items():
        print(f"{det} auc={row['auc']:.4f} tpr@0.05={row['tpr_at_005']:.4f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    K = args.K if args.K is not None else occupancy.default_bins(args.N)
    cfg = {"variant": args.variant, "N": args.N, "K": K, "alpha": args.alpha,
           "max_order": args.max_order, "trials": args.trials, "seed": args.seed}
    _log_config("calibrate", cfg)
    if args.variant == "ocsvm":
        raise UsageError("the ocsvm variant is calibrated during `train` (needs anomaly-free data)")
    spec = occupancy.calibrate(args.variant, args.N, K, args.alpha, r=args.max_order,
                               trials=args.trials, seed=args.seed)
    text = json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"{spec.variant} threshold={spec.threshold!r} direction={spec.direction}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icagan-bsd", description="Bad-sequence detection with ICA-GAN and coincidence tests.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate grid measurements to CSV")
    s.add_argument("--grid", required=True, help="grid JSON (bus4 / bus30 resolve to shipped fixtures)")
    s.add_argument("--T", type=int, required=True, help="number of samples")
    s.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    s.add_argument("--phi", type=float, default=0.999, help="state AR(1) coefficient")
    s.add_argument("--innovation", type=float, default=1e-3, help="state innovation std")
    s.add_argument("--out", type=Path, required=True, help="output CSV")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a model bundle on anomaly-free CSV data")
    t.add_argument("--data", type=Path, required=True, help="anomaly-free measurement CSV")
    t.add_argument("--out", type=Path, required=True, help="bundle directory to write")
    t.add_argument("--config", type=Path, help="JSON with detector parameters (flags win)")
    t.add_argument("--val-fraction", type=float, default=0.2,
                   help="trailing fraction of rows held out for early stopping and the OC-SVM combiner")
    t.add_argument("--alpha", type=float, help="test size")
    t.add_argument("--M", type=int, help="window length")
    t.add_argument("--N", type=int, help="component count")
    t.add_argument("--K", type=int, help="stratification bins (default N^2)")
    t.add_argument("--variant", choices=occupancy.VARIANTS, help="default test variant")
    t.add_argument("--seed", type=int, help="RNG seed")
    t.add_argument("--iters", type=int, help="training iterations")
    t.add_argument("--hidden", type=_ints, help="hidden widths, e.g. 32,32")
    t.add_argument("--order", type=int, help="whitener order")
    t.add_argument("--trials", type=int, help="Monte Carlo calibration trials")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score consecutive blocks of a CSV with a bundle")
    d.add_argument("--model", type=Path, required=True, help="bundle directory")
    d.add_argument("--in", dest="input", type=Path, required=True,
                   help="CSV holding order + k*M samples; one verdict per block")
    d.add_argument("--variant", choices=occupancy.VARIANTS, help="test variant (default: bundle's)")
    d.add_argument("--alpha", type=float, help="test size (recalibrates if it differs from the bundle)")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="run an experiment and write summary.json + roc_*.csv")
    e.add_argument("--config", type=Path, help="experiment JSON (flags win)")
    e.add_argument("--out", type=Path, help="report directory (default <config>_report)")
    e.add_argument("--seed", type=int, help="RNG seed")
    e.add_argument("--case", type=int, choices=(1, 2), help="1 = bad data, 2 = unobservable attack")
    e.add_argument("--alpha", type=float, help="test size")
    e.add_argument("--grid", help="grid JSON")
    e.add_argument("--detectors", help=f"comma-separated subset of {','.join(evalharness.DETECTORS)}")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("calibrate", help="threshold of a coincidence test under uniformity")
    c.add_argument("--variant", choices=("k0", "k1", "vc"), default="k1", help="test variant")
    c.add_argument("--N", type=int, default=50, help="samples per block")
    c.add_argument("--K", type=int, help="bins (default N^2)")
    c.add_argument("--alpha", type=float, default=0.05, help="test size")
    c.add_argument("--max-order", type=int, default=occupancy.DEFAULT_ORDER, help="largest coincidence order r")
    c.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials (k0, vc)")
    c.add_argument("--seed", type=int, default=0, help="RNG seed")
    c.add_argument("--out", type=Path, help="write the test spec JSON here")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ShapeError, NotFittedError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
