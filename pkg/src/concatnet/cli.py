"""Command-line entry point: ``concatnet {synth,train,evaluate,predict,report}``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 training
failure, 5 evaluation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backbone import BackboneError
from .config import ConfigError, load_config
from .data import DataError, write_synthetic_dataset
from .training import CheckpointError, TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_EVALUATION = 5

log = logging.getLogger("concatnet")


def _noise(value: str) -> float:
    x = float(value)
    if not 0.0 <= x < 0.5:
        raise argparse.ArgumentTypeError(f"noise must lie in [0, 0.5), got {x}")
    return x


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_synth(args) -> int:
    out = Path(args.out)
    try:
        write_synthetic_dataset(out, args.n, args.side, args.seed, args.noise)
    except (OSError, DataError) as exc:
        return _fail(EXIT_DATA, f"cannot write synthetic dataset to {out}: {exc}")
    print(f"wrote {3 * args.n} images to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiment import run_training

    try:
        cfg = load_config(args.config, args.set, args.seed)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if args.ablation:
        cfg["train"]["ablation"] = True
    if args.output:
        cfg["output"]["dir"] = args.output
    root = cfg["data"]["root"]
    if root is None or not Path(root).is_dir():
        return _fail(EXIT_DATA, f"dataset root not found: {root}")
    if cfg["model"]["pretrained"] is False and cfg["train"]["freeze_backbones"]:
        log.warning("backbones are randomly initialised and frozen; only the head will learn")
    try:
        summary = run_training(cfg)
    except (DataError, BackboneError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except TrainingError as exc:
        return _fail(EXIT_TRAINING, str(exc))
    for key, m in summary["models"].items():
        f = m["final"]
        print(f"{m['name']}: train_loss={f['train_loss']:.4f} train_acc={f['train_accuracy']:.4f} "
              f"val_loss={f['val_loss']:.4f} val_acc={f['val_accuracy']:.4f}")
    print(f"outputs in {cfg['output']['dir']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .experiment import evaluate_run
    from .metrics import render_text

    try:
        reports = evaluate_run(args.checkpoint, args.data, args.split, args.subset, args.out,
                               tuple(args.formats))
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except (CheckpointError, ValueError) as exc:
        return _fail(EXIT_EVALUATION, str(exc))
    print(render_text(reports))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .experiment import predict_paths

    try:
        records = predict_paths(args.checkpoint, args.path)
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_EVALUATION, str(exc))
    lines = [json.dumps(r) for r in records]
    if args.out:
        Path(args.out).write_text("".join(line + "\n" for line in lines))
    else:
        for line in lines:
            print(line)
    n_bad = sum("error" in r for r in records)
    if n_bad:
        print(f"error: {n_bad} of {len(records)} images could not be decoded", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiment import merge_metrics, render_merged_csv

    try:
        merged = merge_metrics(args.metrics)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail(EXIT_EVALUATION, f"cannot read metrics: {exc}")
    text = render_merged_csv(merged)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(text)
        (out / "metrics.json").write_text(json.dumps({"models": merged}, indent=2))
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="concatnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic three-class texture dataset")
    s.add_argument("--n", type=_positive_int, default=50, help="images per class")
    s.add_argument("--side", type=_positive_int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=_noise, default=0.1)
    s.add_argument("--out", default="synthetic_data")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the concatenated model from a YAML config")
    t.add_argument("config", nargs="?", help="YAML config; defaults are used for missing keys")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. train.epochs=10 (repeatable)")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", action="store_true", help="also train single-backbone baselines")
    t.add_argument("--output", help="output directory (overrides output.dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compute metrics, confusion matrices and ROC curves")
    e.add_argument("checkpoint", help="checkpoint dir, model dir or run dir")
    e.add_argument("--data", help="dataset root (defaults to the run's)")
    e.add_argument("--split", help="split.json to restrict evaluation to (defaults to the run's)")
    e.add_argument("--subset", choices=("test", "train", "all"), default="test")
    e.add_argument("--out", help="output directory")
    e.add_argument("--formats", nargs="+", default=["png"], choices=("png", "svg"))
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="classify images, one JSON line each")
    r.add_argument("checkpoint")
    r.add_argument("path", help="image file or directory")
    r.add_argument("--out", help="write JSON lines here instead of stdout")
    r.set_defaults(func=cmd_predict)

    m = sub.add_parser("report", help="merge metrics.json files into one table")
    m.add_argument("metrics", nargs="+")
    m.add_argument("--out")
    m.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
