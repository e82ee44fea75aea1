"""End-to-end runs: data preparation, (ablation) training, evaluation and prediction.

These functions back the command-line tool but are usable on their own.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

from . import metrics as M
from .config import backbone_specs, dump_config, training_config
from .data import (DataError, LabeledDataset, ImageSample, ingest_dataset, list_images, load_image,
                   preprocess, preprocess_dataset, split_from_membership, stratified_split)
from .fusion import ConcatenatedModel, build_concatenated_model, build_single_model, forward, predict
from .plots import plot_confusion, plot_history, plot_roc
from .training import MANIFEST_FILE, load_checkpoint, train

log = logging.getLogger(__name__)

CONCAT = "concatenated"
SINGLE_A = "backbone_a"
SINGLE_B = "backbone_b"
# Report order: the two baselines first, the concatenated model last
MODEL_ORDER = (SINGLE_A, SINGLE_B, CONCAT)
SUMMARY_FILE = "run_summary.json"
SPLIT_FILE = "split.json"


def display_name(key: str, manifest: dict) -> str:
    names = [f"{b['family']}-{b['variant']}" for b in manifest["model"]["backbones"]]
    if len(names) == 2:
        return f"Concatenated ({names[0]} + {names[1]})"
    return names[0]


def load_dataset(root, class_names=None, side: int = 128) -> LabeledDataset:
    return preprocess_dataset(ingest_dataset(root, class_names), side)


def build_models(cfg: dict, class_names, ablation: bool) -> dict[str, ConcatenatedModel]:
    spec_a, spec_b = backbone_specs(cfg)
    m, seed, c = cfg["model"], int(cfg["seed"]), len(class_names)
    kw = dict(class_names=class_names, head_hidden=bool(m["head_hidden"]), dropout=float(m["dropout"]))
    models = {}
    if ablation:
        # baselines reuse the exact backbone initialisation of the concatenated model
        models[SINGLE_A] = build_single_model(spec_a, c, seed=seed, backbone_seed=seed, **kw)
        models[SINGLE_B] = build_single_model(spec_b, c, seed=seed, backbone_seed=seed + 1, **kw)
    models[CONCAT] = build_concatenated_model(spec_a, spec_b, c, seed=seed, **kw)
    return models


def protocol_record(cfg: dict, num_classes: int, class_names) -> dict:
    frac = float(cfg["data"]["train_fraction"])
    tcfg = training_config(cfg, None)
    return {
        "train_fraction": frac,
        "test_fraction": round(1.0 - frac, 10),
        "input_side": int(cfg["data"]["side"]),
        "num_classes": num_classes,
        "class_names": list(class_names),
        "epochs": tcfg.epochs,
        "batch_size": tcfg.batch_size,
        "optimizer": tcfg.optimizer,
        "learning_rate": tcfg.effective_learning_rate,
        "freeze_backbones": tcfg.freeze_backbones,
        "seed": tcfg.seed,
    }


def run_training(cfg: dict, dataset: LabeledDataset | None = None) -> dict:
    """Train the concatenated model (and, with ``train.ablation``, both
    single-backbone baselines) on one shared split; write everything under
    ``output.dir`` and return the run summary."""
    side = int(cfg["data"]["side"])
    if dataset is None:
        root = cfg["data"]["root"]
        if root is None:
            raise DataError("data.root is not set")
        dataset = load_dataset(root, cfg["data"]["class_names"], side)
    split = stratified_split(dataset, float(cfg["data"]["train_fraction"]), int(cfg["seed"]))
    models = build_models(cfg, dataset.class_names, bool(cfg["train"]["ablation"]))

    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / SPLIT_FILE).write_text(json.dumps(split.membership(), indent=2))
    formats = cfg["output"]["plot_formats"]

    summary = {
        "protocol": protocol_record(cfg, dataset.num_classes, dataset.class_names),
        "data": {
            "root": None if cfg["data"]["root"] is None else str(Path(cfg["data"]["root"]).resolve()),
            "n_samples": len(dataset),
            "n_train": len(split.train),
            "n_test": len(split.test),
            "train_class_counts": split.train.class_counts().tolist(),
            "test_class_counts": split.test.class_counts().tolist(),
        },
        "models": {},
    }
    for key in MODEL_ORDER:
        if key not in models:
            continue
        mdir = out / key
        tcfg = training_config(cfg, mdir)
        log.info("training %s", key)
        model, history, ckpt = train(
            models[key], split, tcfg,
            preprocessing={"side": side, "train_fraction": split.train_fraction},
            extra_manifest={"role": key},
        )
        plot_history(history, mdir / "training_curves", formats)
        final = history.records[-1]
        summary["models"][key] = {
            "name": display_name(key, ckpt.manifest),
            "backbones": ckpt.manifest["model"]["backbones"],
            "final": {"train_loss": final.train_loss, "train_accuracy": final.train_accuracy,
                      "val_loss": final.val_loss, "val_accuracy": final.val_accuracy},
            "best_val_accuracy": float(history.column("val_accuracy").max()),
            "checkpoint": str(mdir / "checkpoints" / "final"),
        }
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2))
    return summary


def resolve_checkpoints(path) -> dict[str, Path]:
    """Map role -> checkpoint dir for a checkpoint dir, a model dir or a run dir."""
    path = Path(path)
    if (path / MANIFEST_FILE).is_file():
        return {path.parent.parent.name if path.parent.name == "checkpoints" else path.name: path}
    if (path / "checkpoints" / "final" / MANIFEST_FILE).is_file():
        return {path.name: path / "checkpoints" / "final"}
    found = {k: path / k / "checkpoints" / "final" for k in MODEL_ORDER
             if (path / k / "checkpoints" / "final" / MANIFEST_FILE).is_file()}
    if not found:
        raise FileNotFoundError(f"no checkpoint found under {path}")
    return found


def check_class_names(expected, root) -> None:
    found = sorted(p.name for p in Path(root).iterdir() if p.is_dir())
    if sorted(expected) != found:
        raise DataError(f"class mismatch: checkpoint has {list(expected)}, dataset {root} has {found}")


def evaluate_models(models: dict[str, tuple[ConcatenatedModel, dict]], dataset: LabeledDataset,
                    out_dir, formats=("png",), batch_size: int = 64) -> dict[str, M.MetricsReport]:
    """Evaluate each model on ``dataset``; writes the combined metrics.json/.csv
    and per-model confusion matrices and plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for key, (model, manifest) in models.items():
        labels, probs = predict(model, dataset, batch_size)
        rep = M.build_report(dataset.labels, labels, probs, dataset.class_names)
        name = display_name(key, manifest)
        reports[name] = rep
        mdir = out / key
        mdir.mkdir(exist_ok=True)
        (mdir / "confusion_matrix.json").write_text(json.dumps(rep.confusion.to_dict(), indent=2))
        plot_confusion(rep.confusion, mdir / "confusion_matrix", f"Confusion matrix: {name}", formats)
        roc = M.multiclass_roc(dataset.labels, probs)
        if roc.curves:
            plot_roc(roc, dataset.class_names, mdir / "roc", f"ROC: {name}", formats)
        with open(mdir / "predictions.jsonl", "w") as fh:
            for s, lab, p in zip(dataset.samples, labels, probs):
                fh.write(json.dumps({"source": s.source_id, "label": int(s.label),
                                     "predicted_label": int(lab), "probabilities": p.tolist()}) + "\n")
    (out / "metrics.json").write_text(M.reports_to_json(reports))
    (out / "metrics.csv").write_text(M.render_csv(reports))
    if len(reports) == 1:
        only = next(iter(reports.values()))
        (out / "confusion_matrix.json").write_text(json.dumps(only.confusion.to_dict(), indent=2))
    else:
        (out / "confusion_matrix.json").write_text(json.dumps(
            {name: rep.confusion.to_dict() for name, rep in reports.items()}, indent=2))
    return reports


def evaluate_run(checkpoint_path, data_root=None, split_file=None, subset: str = "test",
                 out_dir=None, formats=("png",)) -> dict[str, M.MetricsReport]:
    """Evaluate checkpoints on a dataset, optionally restricted to one side of a recorded split.

    Given a run directory, the data root and split default to those of the run.
    """
    checkpoint_path = Path(checkpoint_path)
    ckpts = resolve_checkpoints(checkpoint_path)
    models = {k: load_checkpoint(p) for k, p in ckpts.items()}
    manifest = next(iter(models.values()))[1]
    run_summary = checkpoint_path / SUMMARY_FILE
    if data_root is None and run_summary.is_file():
        data_root = json.loads(run_summary.read_text())["data"]["root"]
    if split_file is None and (checkpoint_path / SPLIT_FILE).is_file():
        split_file = checkpoint_path / SPLIT_FILE
    if data_root is None:
        raise DataError("no data root given and none recorded with the checkpoint")
    if not Path(data_root).is_dir():
        raise DataError(f"dataset root not found: {data_root}")

    class_names = manifest["class_names"]
    check_class_names(class_names, data_root)
    ds = load_dataset(data_root, class_names, int(manifest["preprocessing"]["side"]))
    if split_file is not None and subset != "all":
        split = split_from_membership(ds, json.loads(Path(split_file).read_text()))
        ds = split.test if subset == "test" else split.train
    if out_dir is None:
        out_dir = checkpoint_path / "evaluation" if checkpoint_path.is_dir() else Path("evaluation")
    return evaluate_models(models, ds, out_dir, formats)


def predict_paths(checkpoint_path, path) -> list[dict]:
    """One record per image: predicted class + probabilities, or an error entry."""
    ckpts = resolve_checkpoints(checkpoint_path)
    key = CONCAT if CONCAT in ckpts else next(iter(ckpts))
    model, manifest = load_checkpoint(ckpts[key])
    side = int(manifest["preprocessing"]["side"])
    path = Path(path)
    if path.is_dir():
        files = list_images(path)
    elif path.is_file():
        files = [path]
    else:
        raise DataError(f"no such image or directory: {path}")
    records = []
    for f in files:
        try:
            px = load_image(f)
        except Exception as exc:
            records.append({"source": str(f), "error": f"{exc.__class__.__name__}: {exc}"})
            continue
        img = preprocess(ImageSample(px, 0, str(f)), side).pixels
        pb = forward(model, img[None])
        lab = int(pb.predicted_labels[0])
        records.append({
            "source": str(f),
            "predicted_label": lab,
            "predicted_class": model.class_names[lab],
            "probabilities": {n: float(p) for n, p in zip(model.class_names, pb.probabilities[0])},
        })
    return records


def merge_metrics(paths) -> dict[str, dict]:
    """Collect the model blocks of several metrics.json files, in the given order."""
    merged = {}
    for p in paths:
        for name, block in json.loads(Path(p).read_text())["models"].items():
            merged[name] = block
    return merged


def render_merged_csv(merged: dict[str, dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(M.TABLE_HEADER)
    for name, block in merged.items():
        rows = [(cls, block["per_class"][cls]) for cls in block["class_names"]] + [("Average", block["average"])]
        for cls, r in rows:
            w.writerow([name, cls] + [M.fmt2(r[k]) for k in M.TABLE_FIELDS])
    return buf.getvalue()
