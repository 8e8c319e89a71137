"""Deterministic synthetic datasets of colored blobs.

Each class is defined by a distinct hue, ring position and blob shape, so
classes are separable in raw pixel statistics; per-sample geometry jitter and
optional Gaussian pixel noise provide within-class variation. Generation is
bit-reproducible given a seed, which makes desk-scale training and evaluation
runs cheap and repeatable.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import ArraySource, write_manifest
from .episodes import ClassIndex, SplitManifest

_SHAPES = ("circle", "square", "diamond")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    samples_per_class: int = 40
    image_size: int = 84
    noise_std: float = 0.0
    kind: str = "blobs"
    # class counts per split; zero-valued entries are derived as roughly
    # 60/20/20 with at least one class per split
    train_classes: int = 0
    val_classes: int = 0
    test_classes: int = 0

    def __post_init__(self):
        if self.kind != "blobs":
            raise ValueError(f"unknown synthetic generator kind '{self.kind}'")
        if self.n_classes < 3:
            raise ValueError("need at least 3 classes for the three splits")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def split_counts(self) -> tuple[int, int, int]:
        n_train, n_val, n_test = self.train_classes, self.val_classes, self.test_classes
        if n_train == n_val == n_test == 0:
            n_val = max(1, round(0.2 * self.n_classes))
            n_test = max(1, round(0.2 * self.n_classes))
            n_train = self.n_classes - n_val - n_test
        if min(n_train, n_val, n_test) < 1 or n_train + n_val + n_test != self.n_classes:
            raise ValueError(
                f"split counts ({n_train},{n_val},{n_test}) must be positive and sum to {self.n_classes}"
            )
        return n_train, n_val, n_test


@dataclass(frozen=True)
class SyntheticDataset:
    manifest: SplitManifest
    index: ClassIndex
    source: ArraySource
    spec: SyntheticSpec


def _class_color(class_idx: int, n_classes: int) -> np.ndarray:
    hue = class_idx / n_classes
    return np.array(colorsys.hsv_to_rgb(hue, 0.9, 0.9), dtype=np.float64)


def _blob_mask(size: int, cy: float, cx: float, radius: float, shape: str) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = ys - cy, xs - cx
    if shape == "circle":
        return dy * dy + dx * dx <= radius * radius
    if shape == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= radius * 0.9
    return np.abs(dy) + np.abs(dx) <= radius * 1.3  # diamond


def _render_sample(spec: SyntheticSpec, class_idx: int, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    color = _class_color(class_idx, spec.n_classes)
    shape = _SHAPES[class_idx % len(_SHAPES)]

    # class-specific position on a ring, with mild per-sample jitter
    angle = 2.0 * np.pi * class_idx / spec.n_classes
    ring = 0.15 * size
    cy = size / 2.0 + ring * np.sin(angle) + rng.uniform(-0.05, 0.05) * size
    cx = size / 2.0 + ring * np.cos(angle) + rng.uniform(-0.05, 0.05) * size
    radius = 0.22 * size * (1.0 + rng.uniform(-0.15, 0.15))

    img = np.full((size, size, 3), 0.15, dtype=np.float64)
    img[_blob_mask(size, cy, cx, radius, shape)] = color
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return (img * 255.0 + 0.5).astype(np.uint8)


def class_name(class_idx: int) -> str:
    return f"class{class_idx:02d}"


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticDataset:
    """Generate the full dataset in memory, bit-identical for a given seed."""
    rng = np.random.default_rng([seed, 4])
    n_train, n_val, _ = spec.split_counts()

    images: dict[str, np.ndarray] = {}
    by_class: dict[str, list[str]] = {}
    split_sets: dict[str, set[str]] = {"train": set(), "val": set(), "test": set()}

    for c in range(spec.n_classes):
        cid = class_name(c)
        split = "train" if c < n_train else ("val" if c < n_train + n_val else "test")
        split_sets[split].add(cid)
        refs = []
        for i in range(spec.samples_per_class):
            ref = f"{cid}/{i:03d}"
            images[ref] = _render_sample(spec, c, rng)
            refs.append(ref)
        by_class[cid] = refs

    manifest = SplitManifest(
        train_classes=frozenset(split_sets["train"]),
        val_classes=frozenset(split_sets["val"]),
        test_classes=frozenset(split_sets["test"]),
    )
    return SyntheticDataset(manifest=manifest, index=ClassIndex(by_class),
                            source=ArraySource(images), spec=spec)


def materialize(dataset: SyntheticDataset, out_dir: str | Path) -> Path:
    """Write the dataset to disk as PNGs plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    rows = []
    for split in ("train", "val", "test"):
        for cid in sorted(dataset.manifest.split(split)):
            (out_dir / cid).mkdir(parents=True, exist_ok=True)
            for ref in dataset.index.samples(cid):
                filename = f"{ref}.png"
                Image.fromarray(dataset.source.load(ref)).save(out_dir / filename)
                rows.append((filename, cid, split))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, rows)
    return manifest_path
