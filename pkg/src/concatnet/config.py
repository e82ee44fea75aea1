"""YAML run configuration with flat ``section.key=value`` overrides."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .backbone import BackboneSpec
from .training import TrainingConfig

DEFAULTS = {
    "seed": 0,
    "data": {
        "root": None,
        "class_names": None,
        "train_fraction": 0.8,
        "side": 128,
        "flip_augment": False,
    },
    "model": {
        "backbone_a": {"family": "convnext", "variant": "tiny", "weights_path": None},
        "backbone_b": {"family": "efficientnet", "variant": "b0", "weights_path": None},
        "pretrained": False,
        "head_hidden": False,
        "dropout": 0.0,
    },
    "train": {
        "epochs": 50,
        "batch_size": 5,
        "learning_rate": None,
        "optimizer": "adam",
        "freeze_backbones": True,
        "eval_batch_size": 64,
        "ablation": False,
    },
    "output": {
        "dir": "runs/default",
        "plot_formats": ["png"],
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key '{prefix}{k}'")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{prefix}{k}.")
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one ``a.b.c=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {path}: {exc}") from None
    nested: dict = value
    for k in reversed(keys):
        nested = {k: nested}
    return _merge(cfg, nested)


def load_config(path=None, overrides=(), seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, loaded)
    for o in overrides:
        cfg = apply_override(cfg, o)
    if seed is not None:
        cfg["seed"] = seed
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    d, t = cfg["data"], cfg["train"]
    if not 0 < float(d["train_fraction"]) < 1:
        raise ConfigError(f"data.train_fraction must lie in (0, 1), got {d['train_fraction']}")
    if int(d["side"]) <= 0:
        raise ConfigError(f"data.side must be positive, got {d['side']}")
    try:
        backbone_specs(cfg)
        training_config(cfg, output_dir=None)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def backbone_specs(cfg: dict) -> tuple[BackboneSpec, BackboneSpec]:
    m = cfg["model"]
    side = int(cfg["data"]["side"])
    return tuple(
        BackboneSpec(family=m[k]["family"], variant=str(m[k]["variant"]), pretrained=bool(m["pretrained"]),
                     input_side=side, weights_path=m[k].get("weights_path"))
        for k in ("backbone_a", "backbone_b")
    )


def training_config(cfg: dict, output_dir) -> TrainingConfig:
    t = cfg["train"]
    return TrainingConfig(
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        learning_rate=None if t["learning_rate"] is None else float(t["learning_rate"]),
        optimizer=t["optimizer"],
        freeze_backbones=bool(t["freeze_backbones"]),
        seed=int(cfg["seed"]),
        output_dir=None if output_dir is None else str(output_dir),
        flip_augment=bool(cfg["data"]["flip_augment"]),
        eval_batch_size=int(t["eval_batch_size"]),
    )


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
