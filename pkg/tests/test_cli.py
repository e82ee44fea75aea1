import csv
import json
from pathlib import Path

import numpy as np
import pytest

from concatnet.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from concatnet.config import ConfigError, apply_override, load_config

from oracles import confusion_by_pairs, exact_rates, ovr_by_enumeration, pairwise_auc
from conftest import write_png

TINY = ["--set", "model.backbone_a={family: tiny_test, variant: w8}",
        "--set", "model.backbone_b={family: tiny_test, variant: w16}",
        "--set", "data.side=32", "--set", "train.freeze_backbones=false",
        "--set", "train.learning_rate=0.005", "--set", "data.class_names=[Normal, Liver, Aspergillosis]"]


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth") / "data"
    assert main(["synth", "--n", "6", "--side", "32", "--seed", "7", "--out", str(root)]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def ablation_run(synth_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "run"
    rc = main(["train", "--ablation", "--output", str(out), "--set", f"data.root={synth_root}",
               "--set", "train.epochs=3", *TINY])
    assert rc == EXIT_OK
    return out


# -------------------------------------------------------------------- config

def test_config_defaults_follow_protocol():
    cfg = load_config()
    assert cfg["data"]["train_fraction"] == 0.8 and cfg["data"]["side"] == 128
    assert cfg["train"]["epochs"] == 50 and cfg["train"]["batch_size"] == 5


def test_config_overrides_and_errors(tmp_path):
    cfg = apply_override(load_config(), "train.epochs=7")
    assert cfg["train"]["epochs"] == 7
    with pytest.raises(ConfigError):
        apply_override(cfg, "train.nonsense=1")
    with pytest.raises(ConfigError):
        apply_override(cfg, "no_equals_sign")
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(overrides=["model.backbone_a.family=resnet"])
    assert load_config(seed=42)["seed"] == 42


# --------------------------------------------------------------------- synth

def test_synth_writes_tree(synth_root):
    files = sorted(synth_root.rglob("*.png"))
    assert len(files) == 18
    assert sorted(p.name for p in synth_root.iterdir() if p.is_dir()) == ["Aspergillosis", "Liver", "Normal"]
    assert json.loads((synth_root / "manifest.json").read_text())["seed"] == 7


def test_synth_50_per_class(tmp_path):
    assert main(["synth", "--n", "50", "--seed", "7", "--side", "16", "--out", str(tmp_path / "d")]) == EXIT_OK
    assert len(list((tmp_path / "d").rglob("*.png"))) == 150
    assert (tmp_path / "d" / "manifest.json").is_file()


def test_synth_rerun_byte_identical(synth_root, tmp_path):
    main(["synth", "--n", "6", "--side", "32", "--seed", "7", "--out", str(tmp_path / "again")])
    for p in synth_root.rglob("*.png"):
        assert p.read_bytes() == (tmp_path / "again" / p.relative_to(synth_root)).read_bytes()


def test_synth_noise_out_of_range():
    with pytest.raises(SystemExit) as e:
        main(["synth", "--noise", "0.6"])
    assert e.value.code == EXIT_CONFIG


def test_synth_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--n", "1", "--side", "8", "--out", str(blocker / "sub")]) == EXIT_DATA


# --------------------------------------------------------------------- train

def test_train_outputs(ablation_run):
    for key in ("backbone_a", "backbone_b", "concatenated"):
        hist = (ablation_run / key / "history.csv").read_text().strip().splitlines()
        assert len(hist) == 1 + 3
        assert (ablation_run / key / "training_curves.png").is_file()
        assert (ablation_run / key / "checkpoints" / "final" / "weights.bin").is_file()
    summary = json.loads((ablation_run / "run_summary.json").read_text())
    assert set(summary["models"]) == {"backbone_a", "backbone_b", "concatenated"}
    assert summary["data"]["n_train"] == 12 and summary["data"]["n_test"] == 6


def test_train_repeat_same_history(synth_root, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        assert main(["train", "--output", str(out), "--seed", "5", "--set", f"data.root={synth_root}",
                     "--set", "train.epochs=2", *TINY]) == EXIT_OK
        outs.append(list(csv.reader((out / "concatenated" / "history.csv").open())))
    a, b = (np.array([[float(c) for c in row] for row in rows[1:]]) for rows in outs)
    assert np.abs(a - b).max() <= 1e-4


def test_train_missing_root_no_outputs(tmp_path):
    out = tmp_path / "out"
    rc = main(["train", "--output", str(out), "--set", f"data.root={tmp_path / 'missing'}"])
    assert rc == EXIT_DATA
    assert not out.exists()


def test_train_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {epochs: [")
    assert main(["train", str(bad)]) == EXIT_CONFIG
    assert main(["train", "--set", "train.epochs=0"]) == EXIT_CONFIG


# ------------------------------------------------------------------ evaluate

def test_evaluate_three_blocks(ablation_run):
    assert main(["evaluate", str(ablation_run), "--formats", "png", "svg"]) == EXIT_OK
    ev = ablation_run / "evaluation"
    rows = list(csv.reader((ev / "metrics.csv").open()))
    assert rows[0] == ["AI Models", "Types", "Accuracy", "Precision", "Recall", "F1-Score"]
    assert len(rows) == 1 + 3 * 4
    assert [r[1] for r in rows[1:5]] == ["Normal", "Liver", "Aspergillosis", "Average"]
    assert len({r[0] for r in rows[1:]}) == 3
    for key in ("backbone_a", "backbone_b", "concatenated"):
        for name in ("confusion_matrix.png", "confusion_matrix.svg", "roc.png", "confusion_matrix.json"):
            assert (ev / key / name).is_file()
    assert (ev / "confusion_matrix.json").is_file()


def test_evaluate_metrics_json_matches_oracles(ablation_run):
    ev = ablation_run / "evaluation"
    if not (ev / "metrics.json").is_file():
        main(["evaluate", str(ablation_run)])
    metrics = json.loads((ev / "metrics.json").read_text())["models"]
    recs = [json.loads(l) for l in (ev / "concatenated" / "predictions.jsonl").read_text().splitlines()]
    y = [r["label"] for r in recs]
    pred = [r["predicted_label"] for r in recs]
    probs = np.array([r["probabilities"] for r in recs])
    block = next(v for k, v in metrics.items() if k.startswith("Concatenated"))
    assert block["confusion_matrix"] == confusion_by_pairs(y, pred, 3)
    for c, name in enumerate(block["class_names"]):
        for k, v in exact_rates(*ovr_by_enumeration(y, pred, c)).items():
            assert abs(block["per_class"][name][k] - float(v)) <= 1e-12
        yc = [int(t == c) for t in y]
        assert abs(block["auc"][name] - pairwise_auc(yc, probs[:, c].tolist())) <= 1e-12


def test_evaluate_class_mismatch(ablation_run, tmp_path):
    for cls in ("Normal", "Liver", "Spleen"):
        write_png(tmp_path / "d" / cls / "a.png", size=(32, 32))
    rc = main(["evaluate", str(ablation_run / "concatenated"), "--data", str(tmp_path / "d"),
               "--out", str(tmp_path / "ev")])
    assert rc == EXIT_DATA


def test_evaluate_memorised_train_set(tmp_path):
    root = tmp_path / "d"
    main(["synth", "--n", "4", "--side", "32", "--seed", "1", "--out", str(root)])
    out = tmp_path / "run"
    assert main(["train", "--output", str(out), "--set", f"data.root={root}", "--set", "train.epochs=15",
                 *TINY]) == EXIT_OK
    assert main(["evaluate", str(out), "--subset", "train", "--out", str(tmp_path / "ev")]) == EXIT_OK
    rows = list(csv.reader((tmp_path / "ev" / "metrics.csv").open()))[1:]
    assert all(cell == "1.00" for r in rows for cell in r[2:])


# ------------------------------------------------------------------- predict

def test_predict_single_image(ablation_run, synth_root, capsys):
    img = sorted((synth_root / "Liver").glob("*.png"))[0]
    assert main(["predict", str(ablation_run), str(img)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert len(rec["probabilities"]) == 3
    assert abs(sum(rec["probabilities"].values()) - 1) <= 1e-6


def _ten_images(synth_root, dest):
    dest.mkdir()
    files = sorted(synth_root.rglob("*.png"))[:10]
    for i, f in enumerate(files):
        (dest / f"img_{9 - i:02d}.png").write_bytes(f.read_bytes())
    return dest


def test_predict_directory_order(ablation_run, synth_root, tmp_path):
    d = _ten_images(synth_root, tmp_path / "imgs")
    out = tmp_path / "predictions.jsonl"
    assert main(["predict", str(ablation_run), str(d), "--out", str(out)]) == EXIT_OK
    recs = [json.loads(l) for l in out.read_text().splitlines()]
    assert [Path(r["source"]).name for r in recs] == [f"img_{i:02d}.png" for i in range(10)]


def test_predict_partial_failure(ablation_run, synth_root, tmp_path, capsys):
    d = _ten_images(synth_root, tmp_path / "imgs")
    (d / "img_03.png").write_bytes(b"corrupt")
    assert main(["predict", str(ablation_run), str(d)]) == EXIT_DATA
    recs = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert len(recs) == 10
    assert sum("error" in r for r in recs) == 1 and "img_03.png" in next(r for r in recs if "error" in r)["source"]


# -------------------------------------------------------------------- report

def test_report_merges(ablation_run, tmp_path, capsys):
    ev = ablation_run / "evaluation"
    if not (ev / "metrics.json").is_file():
        main(["evaluate", str(ablation_run)])
    assert main(["report", str(ev / "metrics.json"), "--out", str(tmp_path / "rep")]) == EXIT_OK
    text = (tmp_path / "rep" / "metrics.csv").read_text()
    assert text == (ev / "metrics.csv").read_text()
