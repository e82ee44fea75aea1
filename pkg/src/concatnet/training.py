"""Transfer-learning loop, per-epoch history, and checkpoint persistence."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import BackboneSpec, build_backbone, set_frozen, to_tensor
from .data import DataSplit, LabeledDataset
from .fusion import ConcatenatedModel, logits_of

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd_momentum")
HISTORY_COLUMNS = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy")
WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.json"


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 5
    # None picks 1e-3 for head-only training and 1e-4 end-to-end
    learning_rate: float | None = None
    optimizer: str = "adam"
    freeze_backbones: bool = True
    seed: int = 0
    output_dir: str | None = None
    flip_augment: bool = False
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate is not None and not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return float(self.learning_rate)
        return 1e-3 if self.freeze_backbones else 1e-4


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + [f"{getattr(r, c):.6f}" for c in HISTORY_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:])) for r in rows])


@dataclass
class Checkpoint:
    weights: bytes
    manifest: dict
    path: Path | None = None


def cross_entropy_from_probabilities(probs, labels) -> float:
    """Mean of -ln p[true class]."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    with np.errstate(divide="ignore"):
        return float(-np.log(p[np.arange(y.size), y]).mean())


def evaluate_loss_accuracy(model: ConcatenatedModel, ds: LabeledDataset, batch_size: int = 64) -> tuple[float, float]:
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    images, labels = ds.images(), ds.labels
    logits = np.concatenate([logits_of(model, images[i:i + batch_size])
                             for i in range(0, len(ds), batch_size)])
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(len(labels)), labels].mean())
    acc = float((np.argmax(logits, axis=1) == labels).mean())
    return loss, acc


def _make_optimizer(params, cfg: TrainingConfig):
    lr = cfg.effective_learning_rate
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=lr)
    return torch.optim.SGD(params, lr=lr, momentum=0.9)


def train(model: ConcatenatedModel, split: DataSplit, cfg: TrainingConfig,
          preprocessing: dict | None = None, extra_manifest: dict | None = None):
    """Minimise cross-entropy on ``split.train``; validate on ``split.test`` each epoch.

    Returns ``(model, history, final_checkpoint)``. With ``cfg.output_dir``
    set, ``history.csv`` plus ``checkpoints/best`` and ``checkpoints/final``
    are written there.
    """
    if len(split.train) == 0:
        raise TrainingError("training set is empty")
    if model.num_classes != split.train.num_classes:
        raise TrainingError(f"model has {model.num_classes} outputs but the dataset has "
                            f"{split.train.num_classes} classes")

    out = Path(cfg.output_dir) if cfg.output_dir else None
    preprocessing = preprocessing or {"side": model.input_side}
    for fx in model.backbones:
        set_frozen(fx, cfg.freeze_backbones)
    params = [p for p in model.parameters() if p.requires_grad]
    history = TrainingHistory()
    x_train = split.train.images()
    y_train = torch.from_numpy(split.train.labels)
    rng = np.random.default_rng(cfg.seed)
    best_acc = -1.0

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        opt = _make_optimizer(params, cfg)
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = rng.permutation(len(x_train))
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                xb = to_tensor(x_train[idx])
                if cfg.flip_augment:
                    flip = torch.from_numpy(rng.random(len(idx)) < 0.5)
                    xb = torch.where(flip[:, None, None, None], xb.flip(3), xb)
                loss = F.cross_entropy(model(xb), y_train[idx])
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}")
                opt.zero_grad()
                loss.backward()
                opt.step()
            model.eval()

            tr_loss, tr_acc = evaluate_loss_accuracy(model, split.train, cfg.eval_batch_size)
            va_loss, va_acc = evaluate_loss_accuracy(model, split.test, cfg.eval_batch_size)
            history.records.append(EpochRecord(epoch, tr_loss, tr_acc, va_loss, va_acc))
            log.info("epoch %d/%d train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f",
                     epoch, cfg.epochs, tr_loss, tr_acc, va_loss, va_acc)
            if out is not None and va_acc > best_acc:
                best_acc = va_acc
                save_checkpoint(model, cfg, history, out / "checkpoints" / "best", preprocessing, extra_manifest)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.csv").write_text(history.to_csv())
        ckpt = save_checkpoint(model, cfg, history, out / "checkpoints" / "final", preprocessing, extra_manifest)
    else:
        ckpt = make_checkpoint(model, cfg, history, preprocessing, extra_manifest)
    return model, history, ckpt


def _weights_bytes(model: ConcatenatedModel) -> bytes:
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    return buf.getvalue()


def make_checkpoint(model: ConcatenatedModel, cfg: TrainingConfig | None, history: TrainingHistory | None,
                    preprocessing: dict | None = None, extra: dict | None = None) -> Checkpoint:
    blob = _weights_bytes(model)
    final = asdict(history.records[-1]) if history and history.records else None
    manifest = {
        "format": "concatnet-checkpoint/1",
        "model": {
            "backbones": [fx.spec.to_dict() for fx in model.backbones],
            "class_names": list(model.class_names),
            "head_hidden": model.head_hidden,
            "dropout": model.dropout,
        },
        "class_names": list(model.class_names),
        "preprocessing": {
            "side": model.input_side,
            "normalization": "imagenet" if any(fx.normalize for fx in model.backbones) else "unit",
            **(preprocessing or {}),
        },
        "training_config": asdict(cfg) if cfg else None,
        "final_history": final,
        "hashes": {
            "weights_sha256": hashlib.sha256(blob).hexdigest(),
            "pretrained": {fx.spec.name: fx.weights_sha256 for fx in model.backbones},
        },
    }
    if extra:
        manifest.update(extra)
    return Checkpoint(blob, manifest)


def save_checkpoint(model: ConcatenatedModel, cfg: TrainingConfig | None, history: TrainingHistory | None,
                    path, preprocessing: dict | None = None, extra: dict | None = None) -> Checkpoint:
    ckpt = make_checkpoint(model, cfg, history, preprocessing, extra)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / WEIGHTS_FILE).write_bytes(ckpt.weights)
    (path / MANIFEST_FILE).write_text(json.dumps(ckpt.manifest, indent=2))
    ckpt.path = path
    return ckpt


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        return json.loads((path / MANIFEST_FILE).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no {MANIFEST_FILE}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None


def load_checkpoint(path) -> tuple[ConcatenatedModel, dict]:
    """Rebuild the model recorded at ``path``; the weights hash must match the manifest."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        blob = (path / WEIGHTS_FILE).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no {WEIGHTS_FILE}") from None
    digest = hashlib.sha256(blob).hexdigest()
    expected = manifest.get("hashes", {}).get("weights_sha256")
    if digest != expected:
        raise CheckpointError(f"{path}: weights hash mismatch (manifest {expected}, file {digest})")

    m = manifest["model"]
    specs = [BackboneSpec.from_dict(d) for d in m["backbones"]]
    backbones = [build_backbone(s, load_weights=False) for s in specs]
    model = ConcatenatedModel(backbones[0], backbones[1] if len(backbones) > 1 else None,
                              m["class_names"], m["head_hidden"], m["dropout"])
    try:
        state = torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except Exception as exc:
        raise CheckpointError(f"{path}: weights do not match the recorded architecture ({exc})") from exc
    return model.eval(), manifest
