"""Convolutional feature extractors that map an image batch to pooled embeddings."""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

FAMILIES = ("convnext", "efficientnet", "tiny_test")
WEIGHTS_DIR_ENV = "CONCATNET_WEIGHTS_DIR"

# Published ImageNet channel statistics, applied only with pretrained weights.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_TV_BUILDERS = {
    ("convnext", "tiny"): ("convnext_tiny", "ConvNeXt_Tiny_Weights", 768),
    ("convnext", "small"): ("convnext_small", "ConvNeXt_Small_Weights", 768),
    ("convnext", "base"): ("convnext_base", "ConvNeXt_Base_Weights", 1024),
    ("efficientnet", "b0"): ("efficientnet_b0", "EfficientNet_B0_Weights", 1280),
    ("efficientnet", "b1"): ("efficientnet_b1", "EfficientNet_B1_Weights", 1280),
    ("efficientnet", "b2"): ("efficientnet_b2", "EfficientNet_B2_Weights", 1408),
}


class BackboneError(ValueError):
    pass


def _tiny_width(variant: str) -> int:
    m = re.fullmatch(r"w(\d+)", variant)
    if not m or int(m.group(1)) < 1:
        raise BackboneError(f"tiny_test variant must look like 'w8', got {variant!r}")
    return int(m.group(1))


def embedding_dim_for(family: str, variant: str) -> int:
    if family == "tiny_test":
        return _tiny_width(variant)
    try:
        return _TV_BUILDERS[(family, variant)][2]
    except KeyError:
        known = ", ".join(f"{f}/{v}" for f, v in _TV_BUILDERS)
        raise BackboneError(f"unknown backbone {family}/{variant}; known: {known}, tiny_test/w<N>") from None


@dataclass(frozen=True)
class BackboneSpec:
    family: str
    variant: str
    pretrained: bool = False
    input_side: int = 128
    weights_path: str | None = None
    embedding_dim: int = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BackboneError(f"unknown backbone family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "tiny_test" and self.pretrained:
            raise BackboneError("tiny_test backbones have no pretrained weights")
        if self.input_side <= 0:
            raise BackboneError(f"input_side must be positive, got {self.input_side}")
        object.__setattr__(self, "embedding_dim", embedding_dim_for(self.family, self.variant))

    @property
    def name(self) -> str:
        return f"{self.family}-{self.variant}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        d = {k: v for k, v in d.items() if k != "embedding_dim"}
        return cls(**d)


class TinyTestNet(nn.Module):
    """Three conv blocks; small enough to train on CPU in seconds."""

    def __init__(self, width: int):
        super().__init__()
        mid = max(4, width)
        self.features = nn.Sequential(
            nn.Conv2d(3, mid, 3, stride=2, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(mid, mid, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(mid, width, 3, padding=1), nn.ReLU(),
        )

    def forward(self, x):
        return self.features(x)


class FeatureExtractor(nn.Module):
    """Backbone trunk + global average pooling.

    Takes N x 3 x H x W tensors with values in [0, 1]; channel
    normalisation is applied inside when the weights are pretrained.
    """

    def __init__(self, spec: BackboneSpec, trunk: nn.Module, weights_sha256: str | None = None):
        super().__init__()
        self.spec = spec
        self.trunk = trunk
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.weights_sha256 = weights_sha256
        self.normalize = spec.pretrained
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)
        self.frozen = False

    @property
    def embedding_dim(self) -> int:
        return self.spec.embedding_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        side = self.spec.input_side
        if x.ndim != 4 or tuple(x.shape[1:]) != (3, side, side):
            raise BackboneError(f"expected input of shape (B, 3, {side}, {side}), got {tuple(x.shape)}")
        if self.normalize:
            x = (x - self.mean) / self.std
        return torch.flatten(self.pool(self.trunk(x)), 1)

    def train(self, mode: bool = True):
        # frozen extractors stay in inference mode so BatchNorm statistics do not drift
        super().train(mode and not self.frozen)
        return self


def _torchvision_trunk(spec: BackboneSpec, load_weights: bool) -> tuple[nn.Module, str | None]:
    import torchvision.models as tvm

    fn_name, weights_enum, _ = _TV_BUILDERS[(spec.family, spec.variant)]
    builder = getattr(tvm, fn_name)
    if not (spec.pretrained and load_weights):
        return builder(weights=None).features, None

    if spec.weights_path:
        path = Path(spec.weights_path)
        if not path.is_file():
            raise BackboneError(f"pretrained weights file not found: {path}; "
                                "set pretrained: false to train from random initialisation")
        net = builder(weights=None)
        blob = path.read_bytes()
        state = torch.load(path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        return net.features, hashlib.sha256(blob).hexdigest()

    weights = getattr(tvm, weights_enum).DEFAULT
    if os.environ.get(WEIGHTS_DIR_ENV):
        torch.hub.set_dir(os.environ[WEIGHTS_DIR_ENV])
    try:
        net = builder(weights=weights)
    except Exception as exc:  # network or cache failures surface in many forms
        raise BackboneError(
            f"could not obtain pretrained weights for {spec.name} ({exc}); point weights_path at a "
            f"local state_dict, populate ${WEIGHTS_DIR_ENV}, or set pretrained: false"
        ) from exc
    return net.features, f"torchvision:{weights}"


def build_backbone(spec: BackboneSpec, seed: int = 0, load_weights: bool = True) -> FeatureExtractor:
    """Instantiate the extractor for ``spec``; random initialisation is seeded.

    ``load_weights=False`` builds the architecture (and input normalisation)
    of a pretrained spec without fetching weights, for restoring checkpoints.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if spec.family == "tiny_test":
            trunk, digest = TinyTestNet(spec.embedding_dim), None
        else:
            trunk, digest = _torchvision_trunk(spec, load_weights)
    fx = FeatureExtractor(spec, trunk, digest)
    fx.eval()
    return fx


def to_tensor(batch) -> torch.Tensor:
    """B x H x W x 3 array (or list of arrays) -> B x 3 x H x W float32 tensor."""
    if isinstance(batch, torch.Tensor):
        return batch
    arr = np.asarray(batch, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise BackboneError(f"expected a B x H x W x 3 image batch, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def extract_embeddings(fx: FeatureExtractor, batch) -> np.ndarray:
    x = to_tensor(batch)
    side = fx.spec.input_side
    if tuple(x.shape[1:]) != (3, side, side):
        h, w = x.shape[2:]
        raise BackboneError(f"expected images of {side}x{side}x3, got {h}x{w}x{x.shape[1]}")
    was_training = fx.training
    fx.eval()
    try:
        with torch.no_grad():
            return fx(x).numpy().astype(np.float64)
    finally:
        fx.train(was_training)


def set_frozen(fx: FeatureExtractor, frozen: bool) -> FeatureExtractor:
    fx.frozen = bool(frozen)
    for p in fx.parameters():
        p.requires_grad_(not frozen)
    if frozen:
        fx.eval()
    return fx
