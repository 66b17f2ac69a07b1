"""End-to-end CLI runs on a tiny synthetic dataset."""

import json

import numpy as np
import pytest

from llost.cli import cli_main, read_predictions
from llost.dataset import load_split
from llost.ingest import read_cloud
from llost.metrics import build_report
from llost.trainer import load_checkpoint, predict_split

TINY_TRAIN = dict(shared_dim=8, map_steps=2, map_blocks=2, prior_steps=2, prior_blocks=2,
                  flow_hidden=16, batch_size=8, eval_draws=3, patience=None, epochs=2)
CONFIG = {
    "synth": {"n_types": 2, "samples_per_type": 14, "vocab_size": 20, "points_per_cloud": 32},
    "train": TINY_TRAIN,
    "eval": {"n_boot": 20},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(CONFIG))
    assert cli_main(["synth", "--config", str(cfg), "--out-dir", str(root / "data")]) == 0
    assert cli_main(["train", "--config", str(cfg), "--data", str(root / "data"),
                     "--out-dir", str(root / "model")]) == 0
    assert cli_main(["predict", "--config", str(cfg), "--checkpoint", str(root / "model" / "best.pt"),
                     "--data", str(root / "data" / "test"), "--out-dir", str(root / "pred")]) == 0
    return root, cfg


def test_synth_layout(run):
    root, _ = run
    info = json.loads((root / "data" / "dataset.json").read_text())
    assert info["sizes"] == {"train": 20, "val": 4, "test": 4}
    assert len(info["expected_tml"]) == 2
    for split in ("train", "val", "test"):
        d = root / "data" / split
        for name in ("profiles.csv", "header.json", "manifest.json", "latent_truth.csv"):
            assert (d / name).exists()
    manifest = json.loads((root / "data" / "run_manifest.json").read_text())
    assert {"config_hash", "seed", "versions"} <= set(manifest)


def test_train_artifacts(run):
    root, _ = run
    for name in ("best.pt", "best.json", "last.pt", "curves.csv", "run_manifest.json"):
        assert (root / "model" / name).exists()


def test_predictions_recompute_metrics(run):
    root, _ = run
    p = read_predictions(root / "pred")
    model, _ = load_checkpoint(root / "model" / "best.pt")
    data = load_split(root / "data" / "test")
    direct = predict_split(model, data, seed=0, n_draws=TINY_TRAIN["eval_draws"])
    assert p["ids"] == data.ids
    np.testing.assert_array_equal(p["binary"], direct.binary)
    a = build_report(p["true"], p["mean"], p["binary"], p["logprob"], 20, 0)
    b = build_report(data.counts.numpy(), direct.mean_counts, direct.binary, direct.logprob, 20, 0)
    for k in ("log_perplexity", "rmse", "f1", "ppv", "ppv_mean", "ppv_std"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-9)


def test_eval_writes_report(run):
    root, cfg = run
    out = root / "eval"
    assert cli_main(["eval", "--config", str(cfg), "--predictions", str(root / "pred"),
                     "--out-dir", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert 0 <= rep["f1"] <= 1 and "±" in rep["ppv_text"]
    for ext in ("png", "svg", "csv"):
        assert (out / f"tml_error.{ext}").exists()


def test_plot(run):
    root, _ = run
    out = root / "plots"
    assert cli_main(["plot", "--checkpoint", str(root / "model" / "best.pt"),
                     "--data", str(root / "data" / "train"),
                     "--curves", str(root / "model" / "curves.csv"), "--out-dir", str(out)]) == 0
    for name in ("shared_tsne.png", "shared_tsne.svg", "shared_tsne.csv", "curves.png"):
        assert (out / name).exists()


def test_resume_cli(run):
    root, cfg = run
    assert cli_main(["train", "--config", str(cfg), "--data", str(root / "data"),
                     "--out-dir", str(root / "model"), "--resume"]) == 0


def test_ingest(tmp_path):
    z, y, x = np.mgrid[-8:9, -8:9, -8:9]
    np.save(tmp_path / "m.npy", (x**2 + y**2 + z**2 <= 36).astype(np.uint8))
    (tmp_path / "m.json").write_text(json.dumps({"spacing": [1.0, 1.0, 1.0]}))
    out = tmp_path / "c.ply"
    assert cli_main(["ingest", "--mask", str(tmp_path / "m.npy"), "--meta", str(tmp_path / "m.json"),
                     "--points", "300", "--out", str(out)]) == 0
    assert read_cloud(out).shape == (300, 3)


def test_invalid_json_exits_2_with_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {\n  "epochs": ,\n}}')
    assert cli_main(["synth", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "line 2, column" in capsys.readouterr().err


def test_unknown_config_field_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epoch": 3}}))
    assert cli_main(["train", "--config", str(cfg), "--data", str(tmp_path),
                     "--out-dir", str(tmp_path)]) == 2
    assert "epoch" in capsys.readouterr().err


def test_unknown_flag_and_missing_out_dir(tmp_path):
    assert cli_main(["synth", "--bogus"]) == 2
    assert cli_main(["synth"]) == 2
    assert cli_main([]) == 2


def test_runtime_failure_exits_1(tmp_path):
    assert cli_main(["train", "--data", str(tmp_path / "missing"), "--out-dir", str(tmp_path)]) == 1
