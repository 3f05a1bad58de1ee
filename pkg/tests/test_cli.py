import json

import numpy as np
import pytest

from icagan_bsd.cli import main

TRAIN_CFG = {"max_order": 5, "batch_size": 16, "n_critic": 2, "eval_every": 10, "patience": 2,
             "max_reference": 999, "window": 20, "n_components": 10, "hidden": [8], "n_iter": 20,
             "n_trials": 2000}
EVAL_CFG = {"detectors": ["icagan_k1", "jx"], "split": {"block": 20, "n_train": 60, "n_val": 20,
            "n_clean": 30, "n_anomaly": 30}, "window": 20, "n_components": 10, "hidden": [8],
            "batch_size": 16, "n_critic": 2, "n_iter": 20, "eval_every": 10, "patience": 2,
            "max_order": 5, "n_trials": 2000, "max_reference": 999}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["-q", "simulate", "--grid", "fixtures/bus4.json", "--T", "3000", "--seed", "7",
                 "--out", str(d / "data.csv")]) == 0
    (d / "train.json").write_text(json.dumps(TRAIN_CFG))
    assert main(["-q", "train", "--data", str(d / "data.csv"), "--out", str(d / "bundle"),
                 "--config", str(d / "train.json")]) == 0
    return d


def test_simulate_columns(workdir):
    lines = (workdir / "data.csv").read_text().splitlines()
    assert len(lines) == 3001
    assert len(lines[0].split(",")) == 11 and len(lines[1].split(",")) == 11


def test_detect_prints_verdicts(workdir, capsys):
    rows = (workdir / "data.csv").read_text().splitlines()
    (workdir / "block.csv").write_text("\n".join(rows[: 1 + 24]) + "\n")
    capsys.readouterr()
    assert main(["-q", "detect", "--model", str(workdir / "bundle"), "--in", str(workdir / "block.csv"),
                 "--variant", "k1", "--alpha", "0.05"]) == 0
    out = capsys.readouterr().out.split()
    assert out[0] in ("anomaly", "anomaly_free") and len(out) == 2
    float(out[1])


def test_detect_short_block(workdir):
    rows = (workdir / "data.csv").read_text().splitlines()
    (workdir / "short.csv").write_text("\n".join(rows[:10]) + "\n")
    assert main(["-q", "detect", "--model", str(workdir / "bundle"), "--in", str(workdir / "short.csv")]) == 2


def test_eval_writes_report(workdir):
    (workdir / "exp.json").write_text(json.dumps(EVAL_CFG))
    assert main(["-q", "eval", "--config", str(workdir / "exp.json"), "--out", str(workdir / "rep")]) == 0
    names = sorted(p.name for p in (workdir / "rep").iterdir())
    assert names == ["config.json", "roc_icagan_k1.csv", "roc_jx.csv", "summary.json"]


def test_calibrate(workdir, capsys):
    assert main(["-q", "calibrate", "--N", "50", "--alpha", "0.05", "--out", str(workdir / "t.json")]) == 0
    assert "threshold=45" in capsys.readouterr().out
    assert json.loads((workdir / "t.json").read_text())["threshold"] == 45


@pytest.mark.parametrize("cmd", ["simulate", "train", "detect", "eval", "calibrate"])
def test_help_exits_zero(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "--" in capsys.readouterr().out


def test_unknown_flag_is_usage_error():
    assert main(["simulate", "--bogus"]) == 1


def test_no_subcommand():
    assert main([]) == 1


def test_missing_grid_is_data_error(tmp_path):
    assert main(["-q", "simulate", "--grid", str(tmp_path / "x.json"), "--T", "5", "--out",
                 str(tmp_path / "o.csv")]) == 2


def test_empty_detector_list(tmp_path):
    assert main(["-q", "eval", "--detectors", ",", "--out", str(tmp_path / "r")]) == 2


def test_bad_config_key_is_usage_error(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"nonsense": 1}))
    assert main(["-q", "train", "--data", "x.csv", "--out", str(tmp_path / "b"),
                 "--config", str(tmp_path / "c.json")]) == 1


def test_numerical_failure_exit_code(tmp_path):
    (tmp_path / "d.csv").write_text("t,ch_0\n" + "".join(f"{i},{1e308 if i % 2 else -1e308}\n" for i in range(400)))
    cfg = {**TRAIN_CFG, "n_iter": 2}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    with np.errstate(all="ignore"):
        rc = main(["-q", "train", "--data", str(tmp_path / "d.csv"), "--out", str(tmp_path / "b"),
                   "--config", str(tmp_path / "c.json")])
    assert rc == 3
