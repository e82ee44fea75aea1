"""The concatenated dual-backbone classifier and its prediction contracts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .backbone import BackboneSpec, FeatureExtractor, build_backbone, to_tensor

HIDDEN_WIDTH = 256


class FusionError(ValueError):
    pass


@dataclass
class PredictionBatch:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_labels: np.ndarray


def fuse(e_a, e_b):
    """Row-wise concatenation of two embedding matrices (numpy or torch)."""
    if e_a.shape[0] != e_b.shape[0]:
        raise FusionError(f"batch size mismatch: {e_a.shape[0]} vs {e_b.shape[0]}")
    if isinstance(e_a, torch.Tensor):
        return torch.cat([e_a, e_b], dim=1)
    return np.concatenate([np.asarray(e_a), np.asarray(e_b)], axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _init_linear(layer: nn.Linear) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.zeros_(layer.bias)


def build_head(in_features: int, num_classes: int, hidden: bool = False, dropout: float = 0.0) -> nn.Sequential:
    layers: list[nn.Module] = []
    if dropout > 0:
        layers.append(nn.Dropout(dropout))
    if hidden:
        layers += [nn.Linear(in_features, HIDDEN_WIDTH), nn.ReLU()]
        if dropout > 0:
            layers.append(nn.Dropout(dropout))
        in_features = HIDDEN_WIDTH
    layers.append(nn.Linear(in_features, num_classes))
    head = nn.Sequential(*layers)
    for m in head:
        if isinstance(m, nn.Linear):
            _init_linear(m)
    return head


class ConcatenatedModel(nn.Module):
    """Two feature extractors whose pooled embeddings are concatenated and
    classified by a shared head.

    ``backbone_b`` may be ``None``; the model then reduces to a single-backbone
    classifier, which is how the ablation baselines are built.
    """

    def __init__(self, backbone_a: FeatureExtractor, backbone_b: FeatureExtractor | None,
                 class_names: Sequence[str], head_hidden: bool = False, dropout: float = 0.0):
        super().__init__()
        if len(class_names) < 2:
            raise FusionError(f"need at least 2 classes, got {len(class_names)}")
        if backbone_b is not None and backbone_a.spec.input_side != backbone_b.spec.input_side:
            raise FusionError(
                f"backbones disagree on input side: {backbone_a.spec.input_side} vs {backbone_b.spec.input_side}")
        self.backbone_a = backbone_a
        self.backbone_b = backbone_b
        self.class_names = list(class_names)
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.head = build_head(self.fused_dim, len(self.class_names), head_hidden, dropout)

    @property
    def backbones(self) -> list[FeatureExtractor]:
        return [b for b in (self.backbone_a, self.backbone_b) if b is not None]

    @property
    def fused_dim(self) -> int:
        return sum(b.embedding_dim for b in self.backbones)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_side(self) -> int:
        return self.backbone_a.spec.input_side

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        if self.backbone_b is None:
            return self.backbone_a(x)
        return fuse(self.backbone_a(x), self.backbone_b(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x))


def _build_head_seeded(model_fn, seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return model_fn()


def build_concatenated_model(spec_a: BackboneSpec, spec_b: BackboneSpec, num_classes: int = 3,
                             seed: int = 0, class_names: Sequence[str] | None = None,
                             head_hidden: bool = False, dropout: float = 0.0) -> ConcatenatedModel:
    if num_classes < 2:
        raise FusionError(f"num_classes must be >= 2, got {num_classes}")
    if spec_a.input_side != spec_b.input_side:
        raise FusionError(f"backbones disagree on input side: {spec_a.input_side} vs {spec_b.input_side}")
    names = _class_names(num_classes, class_names)
    a = build_backbone(spec_a, seed=seed)
    b = build_backbone(spec_b, seed=seed + 1)
    model = _build_head_seeded(lambda: ConcatenatedModel(a, b, names, head_hidden, dropout), seed + 2)
    return model.eval()


def build_single_model(spec: BackboneSpec, num_classes: int = 3, seed: int = 0,
                       class_names: Sequence[str] | None = None, head_hidden: bool = False,
                       dropout: float = 0.0, backbone_seed: int | None = None) -> ConcatenatedModel:
    """Single-backbone baseline with the same head recipe as the concatenated model."""
    if num_classes < 2:
        raise FusionError(f"num_classes must be >= 2, got {num_classes}")
    names = _class_names(num_classes, class_names)
    a = build_backbone(spec, seed=seed if backbone_seed is None else backbone_seed)
    model = _build_head_seeded(lambda: ConcatenatedModel(a, None, names, head_hidden, dropout), seed + 2)
    return model.eval()


def _class_names(num_classes: int, class_names) -> list[str]:
    if class_names is None:
        from .data import DEFAULT_CLASS_NAMES

        if num_classes == len(DEFAULT_CLASS_NAMES):
            return list(DEFAULT_CLASS_NAMES)
        return [f"class_{i}" for i in range(num_classes)]
    if len(class_names) != num_classes:
        raise FusionError(f"{len(class_names)} class names given for {num_classes} classes")
    return list(class_names)


def logits_of(model: ConcatenatedModel, batch) -> np.ndarray:
    x = to_tensor(batch)
    side = model.input_side
    if x.ndim != 4 or tuple(x.shape[1:]) != (3, side, side):
        raise FusionError(f"expected images of shape ({side}, {side}, 3), got {tuple(x.shape[2:])} "
                          f"with {x.shape[1] if x.ndim == 4 else '?'} channels")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(x).double().numpy()
    finally:
        model.train(was_training)


def predictions_from_logits(logits: np.ndarray) -> PredictionBatch:
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax(logits)
    # np.argmax returns the first maximum: lowest class index wins ties
    return PredictionBatch(logits, probs, np.argmax(logits, axis=1))


def forward(model: ConcatenatedModel, batch) -> PredictionBatch:
    return predictions_from_logits(logits_of(model, batch))


def predict(model: ConcatenatedModel, dataset, batch_size: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and N x C probabilities for a LabeledDataset, in dataset order."""
    if batch_size < 1:
        raise FusionError(f"batch_size must be >= 1, got {batch_size}")
    if len(dataset) == 0:
        raise FusionError("cannot predict on an empty dataset")
    images = dataset.images()
    chunks = [logits_of(model, images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    out = predictions_from_logits(np.concatenate(chunks))
    return out.predicted_labels, out.probabilities
