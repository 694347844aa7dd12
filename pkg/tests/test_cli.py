import importlib
import json
import subprocess
import sys
import time

import pytest

from sizeseg import cli
from sizeseg.network import load_checkpoint
from sizeseg.training import METRICS_HEADER, read_metrics

verify_mod = importlib.import_module("sizeseg.verify")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert cli.main(["generate", "--out", str(root), "--count", "40", "--height", "16", "--width", "16",
                     "--m-full", "4", "--seed", "3"]) == 0
    return root


def test_pipeline(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    common = ["--data-dir", str(dataset), "--out-dir", str(out), "--depth", "1", "--base-channels", "2"]
    assert cli.main(["pretrain", *common, "--max-epochs", "2", "--batch-size", "4"]) == 0
    assert cli.main(["finetune", "--checkpoint", str(out / "pretrained.ckpt"), *common, "--max-epochs", "1"]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert [r.phase for r in read_metrics(out / "metrics.csv")] == ["pretrain", "pretrain", "finetune"]
    assert load_checkpoint(out / "finetuned.ckpt").arch.depth == 1
    assert cli.main(["evaluate", "--checkpoint", str(out / "finetuned.ckpt"), "--data-dir", str(dataset),
                     "--out", str(tmp_path / "rows.csv")]) == 0
    assert "mean E" in capsys.readouterr().out
    assert (tmp_path / "rows.csv").read_text().startswith("uid,gt_size,pred_size,E,IoU")


def test_bench(dataset, tmp_path):
    assert cli.main(["bench", "--data-dir", str(dataset), "--out-dir", str(tmp_path), "--n-values", "1", "2",
                     "--epochs", "1", "--depth", "1", "--base-channels", "2"]) == 0
    rows = (tmp_path / "bench.csv").read_text().splitlines()
    assert rows[0] == "method,n_samples,epochs,mean_s,std_s" and len(rows) == 4


def test_config_file_and_override(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 5, "n_samples": 4, "mix_full_loss": True}))
    args = cli.build_parser().parse_args(["finetune", "--checkpoint", "x", "--config", str(tmp_path / "c.json"),
                                          "--n-samples", "2", "--no-mix-full-loss", "--data-dir", "d"])
    cfg = cli.config_from_args(args)
    assert (cfg.seed, cfg.n_samples, cfg.mix_full_loss, cfg.data_dir) == (5, 2, False, "d")


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text('{"learning_rate": 1}')
    args = cli.build_parser().parse_args(["pretrain", "--config", str(tmp_path / "c.json")])
    with pytest.raises(ValueError):
        cli.config_from_args(args)


def test_verify_quick(tmp_path):
    t0 = time.perf_counter()
    assert cli.main(["verify", "--report", str(tmp_path / "report.json")]) == 0
    assert time.perf_counter() - t0 < 60
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"]
    modules = {c["module"] for c in report["checks"]}
    assert modules == {"grid", "dtransform", "sizefn", "stochastic", "estimator", "network", "data", "training"}
    for c in report["checks"]:
        assert {"name", "measured", "tolerance", "passed"} <= set(c)


def test_verify_detects_dt_fault(tmp_path, monkeypatch):
    monkeypatch.setattr(verify_mod, "_GROUPS", [verify_mod._dt_checks])
    assert cli.main(["verify", "--inject-dt-fault", "--report", str(tmp_path / "r.json")]) == 1
    failed = [c["name"] for c in json.loads((tmp_path / "r.json").read_text())["checks"] if not c["passed"]]
    assert "two-pass equals brute force" in failed


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sizeseg", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("generate", "pretrain", "finetune", "evaluate", "verify", "bench"):
        assert cmd in res.stdout
