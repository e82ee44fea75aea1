"""Labeled image datasets: folder ingestion, preprocessing, stratified splits
and the synthetic texture benchmark used in place of clinical data."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

DEFAULT_CLASS_NAMES = ("Normal", "Liver", "Aspergillosis")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class DataError(ValueError):
    """Raised for malformed datasets, unreadable images and bad split arguments."""


@dataclass(frozen=True, eq=False)
class ImageSample:
    pixels: np.ndarray
    label: int
    source_id: str

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.size == 0:
            raise DataError(f"{self.source_id}: empty image")
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] not in (1, 3)):
            raise DataError(f"{self.source_id}: expected HxW, HxWx1 or HxWx3 pixels, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise DataError(f"{self.source_id}: pixel values must lie in [0, 1]")
        if self.label < 0:
            raise DataError(f"{self.source_id}: negative label {self.label}")


@dataclass
class LabeledDataset:
    samples: list[ImageSample]
    class_names: list[str] = field(default_factory=lambda: list(DEFAULT_CLASS_NAMES))

    def __post_init__(self):
        self.class_names = list(self.class_names)
        if len(self.class_names) < 2:
            raise DataError("a dataset needs at least two classes")
        for s in self.samples:
            if s.label >= len(self.class_names):
                raise DataError(f"{s.source_id}: label {s.label} outside {len(self.class_names)} classes")
        self.samples = sorted(self.samples, key=lambda s: s.source_id)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def source_ids(self) -> list[str]:
        return [s.source_id for s in self.samples]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def images(self) -> np.ndarray:
        """Stack pixels into an N x H x W x 3 float32 array (all samples must share a shape)."""
        if not self.samples:
            return np.zeros((0, 0, 0, 3), dtype=np.float32)
        shapes = {s.pixels.shape for s in self.samples}
        if len(shapes) != 1:
            raise DataError(f"samples have mixed shapes {sorted(shapes)}; preprocess first")
        return np.stack([s.pixels for s in self.samples]).astype(np.float32, copy=False)

    def subset(self, source_ids) -> "LabeledDataset":
        keep = set(source_ids)
        return LabeledDataset([s for s in self.samples if s.source_id in keep], self.class_names)


@dataclass
class DataSplit:
    train: LabeledDataset
    test: LabeledDataset
    train_fraction: float
    seed: int

    def membership(self) -> dict:
        return {
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "class_names": list(self.train.class_names),
            "train": self.train.source_ids,
            "test": self.test.source_ids,
        }


def load_image(path) -> np.ndarray:
    """Decode one image file to an H x W x 3 float32 array in [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        return np.asarray(im, dtype=np.float32) / 255.0


def list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def ingest_dataset(root, class_names: Sequence[str] | None = None) -> LabeledDataset:
    """Read a ``root/<ClassName>/*.png|jpg`` tree.

    Without ``class_names`` the label order is the alphabetical order of the
    subdirectories. Every undecodable file is collected and reported at once.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    if class_names is None:
        class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
        if len(class_names) < 2:
            raise DataError(f"{root}: expected one subdirectory per class, found {class_names}")
    class_names = list(class_names)

    missing = [c for c in class_names if not (root / c).is_dir()]
    if missing:
        raise DataError(f"{root}: missing class directory for {', '.join(missing)}")

    samples, bad = [], []
    for label, name in enumerate(class_names):
        files = list_images(root / name)
        if not files:
            raise DataError(f"{root}: class directory '{name}' contains no images")
        for path in files:
            try:
                pixels = load_image(path)
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                bad.append(f"{path} ({exc.__class__.__name__})")
                continue
            samples.append(ImageSample(pixels, label, str(path.relative_to(root))))
    if bad:
        raise DataError("undecodable image files:\n  " + "\n  ".join(bad))
    return LabeledDataset(samples, class_names)


def _as_rgb(pixels: np.ndarray) -> np.ndarray:
    px = np.asarray(pixels, dtype=np.float32)
    if px.ndim == 2:
        px = px[:, :, None]
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    return px


def resize_bilinear(pixels: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping (no antialiasing)."""
    px = _as_rgb(pixels)
    if px.shape[:2] == (side, side):
        return px.copy()
    t = torch.from_numpy(np.ascontiguousarray(px.transpose(2, 0, 1)))[None]
    out = F.interpolate(t, size=(side, side), mode="bilinear", align_corners=False, antialias=False)
    return out[0].numpy().transpose(1, 2, 0).copy()


def preprocess(sample: ImageSample, side: int = 128) -> ImageSample:
    if side <= 0:
        raise DataError(f"side must be positive, got {side}")
    px = np.clip(resize_bilinear(sample.pixels, side), 0.0, 1.0)
    return ImageSample(px, sample.label, sample.source_id)


def preprocess_dataset(ds: LabeledDataset, side: int = 128) -> LabeledDataset:
    return LabeledDataset([preprocess(s, side) for s in ds.samples], ds.class_names)


def _train_count(n: int, train_fraction: float) -> int:
    # guards against 0.29 * 100 == 28.999999999999996
    return int(math.floor(train_fraction * n + 1e-9))


def stratified_split(ds: LabeledDataset, train_fraction: float = 0.8, seed: int = 0) -> DataSplit:
    """Per-class seeded shuffle; the first floor(fraction * n_c) of each class train."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c, name in enumerate(ds.class_names):
        members = [s for s in ds.samples if s.label == c]
        if len(members) < 2:
            raise DataError(f"class '{name}' has {len(members)} samples; at least 2 are needed to split")
        order = rng.permutation(len(members))
        k = _train_count(len(members), train_fraction)
        train.extend(members[i] for i in order[:k])
        test.extend(members[i] for i in order[k:])
    return DataSplit(
        LabeledDataset(train, ds.class_names),
        LabeledDataset(test, ds.class_names),
        train_fraction,
        seed,
    )


def split_from_membership(ds: LabeledDataset, membership: dict) -> DataSplit:
    """Rebuild a split recorded by :meth:`DataSplit.membership`."""
    known = set(ds.source_ids)
    missing = [sid for sid in membership["train"] + membership["test"] if sid not in known]
    if missing:
        raise DataError(f"split file references {len(missing)} unknown samples, e.g. {missing[:3]}")
    return DataSplit(
        ds.subset(membership["train"]),
        ds.subset(membership["test"]),
        float(membership["train_fraction"]),
        int(membership["seed"]),
    )


# Synthetic textures. Each class has its own two-colour palette so that the
# classes stay separable even for a nearest-centroid classifier on raw pixels.
SYNTH_PALETTES = {
    0: ((0.35, 0.15, 0.15), (0.95, 0.65, 0.55)),
    1: ((0.20, 0.30, 0.15), (0.75, 0.90, 0.55)),
    2: ((0.15, 0.20, 0.40), (0.60, 0.75, 0.95)),
}
STRIPE_ANGLE_DEG = 30.0
STRIPE_PERIOD_FRACTION = 1 / 8
CHECKER_CELL_FRACTION = 1 / 8


def _blob_texture(side: int, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    n_blobs = int(rng.integers(2, 5))
    centres = rng.uniform(0.2, 0.8, size=(n_blobs, 2)) * side
    radii = rng.uniform(0.12, 0.25, size=n_blobs) * side
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    t = np.zeros((side, side))
    for (cy, cx), r in zip(centres, radii):
        d = np.hypot(yy - cy, xx - cx)
        t = np.maximum(t, np.clip(1.0 - d / r, 0.0, 1.0))
    return t, {"centres": centres.round(4).tolist(), "radii": radii.round(4).tolist()}


def _stripe_texture(side: int, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    phase = float(rng.uniform(0.0, 2 * np.pi))
    theta = np.deg2rad(STRIPE_ANGLE_DEG)
    period = side * STRIPE_PERIOD_FRACTION
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    t = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    return t, {"phase": round(phase, 6)}


def _checker_texture(side: int, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    cell = max(1, int(round(side * CHECKER_CELL_FRACTION)))
    oy, ox = (int(v) for v in rng.integers(0, 2 * cell, size=2))
    yy, xx = np.mgrid[0:side, 0:side]
    t = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    return t, {"offset": [oy, ox]}


_TEXTURES = (_blob_texture, _stripe_texture, _checker_texture)


def _synthesize(n_per_class: int, side: int, seed: int, noise_level: float):
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    if side < 2:
        raise DataError(f"side must be >= 2, got {side}")
    if not 0.0 <= noise_level < 0.5:
        raise DataError(f"noise_level must lie in [0, 0.5), got {noise_level}")
    rng = np.random.default_rng(seed)
    samples, params = [], []
    for label, texture in enumerate(_TEXTURES):
        low, high = (np.array(v) for v in SYNTH_PALETTES[label])
        for i in range(n_per_class):
            t, p = texture(side, rng)
            img = low + (high - low) * t[:, :, None]
            img = img + rng.uniform(-noise_level, noise_level, size=img.shape)
            img = np.clip(img, 0.0, 1.0).astype(np.float32)
            sid = f"{DEFAULT_CLASS_NAMES[label]}/{DEFAULT_CLASS_NAMES[label].lower()}_{i:04d}.png"
            samples.append(ImageSample(img, label, sid))
            params.append({"source_id": sid, **p})
    return samples, params


def generate_synthetic_dataset(n_per_class: int, side: int = 128, seed: int = 0,
                               noise_level: float = 0.1) -> LabeledDataset:
    """Three texture classes: radial gradient blobs, oriented stripes, checkerboards.

    Class names follow the clinical label order (Normal, Liver, Aspergillosis).
    """
    samples, _ = _synthesize(n_per_class, side, seed, noise_level)
    return LabeledDataset(samples, list(DEFAULT_CLASS_NAMES))


def write_synthetic_dataset(out_dir, n_per_class: int, side: int = 128, seed: int = 0,
                            noise_level: float = 0.1) -> Path:
    """Generate the synthetic benchmark and write it as an image-folder tree plus manifest.json."""
    samples, params = _synthesize(n_per_class, side, seed, noise_level)
    out_dir = Path(out_dir)
    for name in DEFAULT_CLASS_NAMES:
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    for s in samples:
        arr = np.round(s.pixels * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out_dir / s.source_id, format="PNG")
    manifest = {
        "generator": "concatnet.data.generate_synthetic_dataset",
        "seed": seed,
        "noise_level": noise_level,
        "n_per_class": n_per_class,
        "side": side,
        "class_names": list(DEFAULT_CLASS_NAMES),
        "textures": {
            "Normal": {"kind": "radial_gradient_blobs", "palette": SYNTH_PALETTES[0]},
            "Liver": {"kind": "oriented_stripes", "palette": SYNTH_PALETTES[1],
                      "angle_deg": STRIPE_ANGLE_DEG, "period_fraction": STRIPE_PERIOD_FRACTION},
            "Aspergillosis": {"kind": "checkerboard", "palette": SYNTH_PALETTES[2],
                              "cell_fraction": CHECKER_CELL_FRACTION},
        },
        "samples": params,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out_dir


def nearest_centroid_accuracy(train: LabeledDataset, test: LabeledDataset) -> float:
    """Raw-pixel nearest-centroid baseline; used as a separability check."""
    xtr = train.images().reshape(len(train), -1).astype(np.float64)
    xte = test.images().reshape(len(test), -1).astype(np.float64)
    ytr, yte = train.labels, test.labels
    centroids = np.stack([xtr[ytr == c].mean(axis=0) for c in range(train.num_classes)])
    d = ((xte[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float((d.argmin(axis=1) == yte).mean())
