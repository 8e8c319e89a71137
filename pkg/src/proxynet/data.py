"""Dataset ingestion, preprocessing and episode tensorization.

Split manifests are CSV files with the header ``filename,label,split``
(UTF-8, LF line endings). Images are standard raster files decoded to 8-bit
RGB. Training preprocessing follows resize -> random crop -> color jitter ->
random horizontal flip -> normalize; evaluation uses resize -> center crop ->
normalize only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
from PIL import Image

from .episodes import ClassIndex, Episode, SplitManifest
from .errors import (
    DecodeError,
    DegenerateImageError,
    DuplicateSampleError,
    EmptySplitError,
    ParseError,
)

MANIFEST_HEADER = ("filename", "label", "split")
SPLIT_NAMES = ("train", "val", "test")

# dataset-level channel statistics of the large-scale natural-image corpora
# this pipeline targets; override per dataset via AugmentationPolicy
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)

# ITU-R 601 luma weights, used for contrast/saturation jitter
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class SampleRecord:
    ref: str
    class_id: str


@dataclass(frozen=True)
class AugmentationPolicy:
    """Preprocessing knobs. Randomized steps apply in train mode only."""

    resize_to: int = 92
    crop_to: int = 84
    random_crop: bool = True
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    horizontal_flip_prob: float = 0.5
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD

    def __post_init__(self):
        if self.crop_to > self.resize_to:
            raise ValueError(f"crop_to={self.crop_to} exceeds resize_to={self.resize_to}")
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ValueError("horizontal_flip_prob must be in [0, 1]")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} magnitude must be >= 0")

    @classmethod
    def disabled(cls, **kwargs) -> "AugmentationPolicy":
        """Policy whose train-mode pipeline equals the eval-mode one."""
        return cls(random_crop=False, brightness=0.0, contrast=0.0, saturation=0.0,
                   horizontal_flip_prob=0.0, **kwargs)


class SampleSource(Protocol):
    """Resolves a sample reference to a decoded RGB image (HxWx3 uint8)."""

    def load(self, ref: str) -> np.ndarray: ...


class ImageFolderSource:
    """Loads sample references as image files relative to a root directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def load(self, ref: str) -> np.ndarray:
        path = self.root / ref
        try:
            with Image.open(path) as img:
                return np.asarray(img.convert("RGB"))
        except (OSError, ValueError) as exc:
            raise DecodeError(f"cannot decode image '{path}': {exc}") from exc


class ArraySource:
    """In-memory sample store, used by synthetic datasets."""

    def __init__(self, images: dict[str, np.ndarray]):
        self._images = images

    def load(self, ref: str) -> np.ndarray:
        try:
            return self._images[ref]
        except KeyError as exc:
            raise DecodeError(f"unknown sample reference '{ref}'") from exc

    def refs(self) -> tuple[str, ...]:
        return tuple(self._images)


def load_manifest(path: str | Path) -> tuple[SplitManifest, ClassIndex]:
    """Parse a split-manifest CSV into (SplitManifest, ClassIndex).

    The index covers all classes; restrict it per split via
    ``ValidatedSplit.split_index`` after :func:`validate_split`.
    """
    path = Path(path)
    by_class: dict[str, list[str]] = {}
    split_classes: dict[str, set[str]] = {name: set() for name in SPLIT_NAMES}
    seen: set[tuple[str, str]] = set()

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty manifest") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(MANIFEST_HEADER)}, got {','.join(header)}")

        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(path, line_no, f"expected 3 columns, got {len(row)}")
            filename, label, split = (col.strip() for col in row)
            if not filename or not label:
                raise ParseError(path, line_no, "empty filename or label")
            if split not in SPLIT_NAMES:
                raise ParseError(path, line_no, f"unknown split '{split}' (expected one of {SPLIT_NAMES})")
            if (filename, label) in seen:
                raise DuplicateSampleError(path, line_no, filename, label)
            seen.add((filename, label))
            by_class.setdefault(label, []).append(filename)
            split_classes[split].add(label)

    for name in SPLIT_NAMES:
        if not split_classes[name]:
            raise EmptySplitError(name)

    manifest = SplitManifest(
        train_classes=frozenset(split_classes["train"]),
        val_classes=frozenset(split_classes["val"]),
        test_classes=frozenset(split_classes["test"]),
    )
    return manifest, ClassIndex(by_class)


def write_manifest(path: str | Path, rows: list[tuple[str, str, str]]) -> None:
    """Write (filename, label, split) rows in the manifest format."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def _to_float_rgb(image) -> np.ndarray:
    """Coerce a decoded image to float64 HxWx3 in [0, 1]."""
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DecodeError(f"expected an HxWx3 RGB image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DecodeError("float images must lie in [0, 1]")
    return arr


def _resize_bilinear(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.shape[0] == size and arr.shape[1] == size:
        return arr
    img = Image.fromarray(np.clip(arr * 255.0, 0.0, 255.0).astype(np.uint8))
    img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img).astype(np.float64) / 255.0


def random_crop_offsets(rng: np.random.Generator, max_offset: int) -> tuple[int, int]:
    """Uniform crop offsets over {0..max_offset} per axis."""
    if max_offset == 0:
        return 0, 0
    return int(rng.integers(0, max_offset + 1)), int(rng.integers(0, max_offset + 1))


def _jitter(arr: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    def factor(magnitude: float) -> float:
        if magnitude == 0.0:
            return 1.0
        return float(rng.uniform(max(0.0, 1.0 - magnitude), 1.0 + magnitude))

    b, c, s = factor(policy.brightness), factor(policy.contrast), factor(policy.saturation)
    arr = np.clip(arr * b, 0.0, 1.0)
    gray_mean = float((arr @ _LUMA).mean())
    arr = np.clip(gray_mean + (arr - gray_mean) * c, 0.0, 1.0)
    gray = (arr @ _LUMA)[..., None]
    arr = np.clip(gray + (arr - gray) * s, 0.0, 1.0)
    return arr


def preprocess(image, policy: AugmentationPolicy, train_mode: bool,
               rng: np.random.Generator | None = None) -> torch.Tensor:
    """Turn one decoded RGB image into a normalized 3x84x84 float tensor.

    Train mode applies resize -> random crop -> color jitter -> random
    horizontal flip -> normalize; eval mode applies resize -> center crop ->
    normalize and is a deterministic function of the image alone.
    """
    arr = _to_float_rgb(image)
    if min(arr.shape[0], arr.shape[1]) < 8:
        raise DegenerateImageError(arr.shape[:2])
    if train_mode and rng is None:
        raise ValueError("train-mode preprocessing needs an rng")

    arr = _resize_bilinear(arr, policy.resize_to)
    delta = policy.resize_to - policy.crop_to
    if train_mode and policy.random_crop:
        dy, dx = random_crop_offsets(rng, delta)
    else:
        dy = dx = delta // 2
    arr = arr[dy:dy + policy.crop_to, dx:dx + policy.crop_to]

    if train_mode:
        arr = _jitter(arr, policy, rng)
        if policy.horizontal_flip_prob > 0.0 and rng.random() < policy.horizontal_flip_prob:
            arr = arr[:, ::-1]

    mean = np.asarray(policy.mean, dtype=np.float64)
    std = np.asarray(policy.std, dtype=np.float64)
    arr = (arr - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def episode_tensors(episode: Episode, source: SampleSource, policy: AugmentationPolicy,
                    train_mode: bool, rng: np.random.Generator | None = None
                    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Resolve an episode's sample references to stacked image tensors.

    Returns (support_x, support_y, query_x, query_y) with images preprocessed
    under the given policy and mode.
    """
    def stack(pairs):
        xs = [preprocess(source.load(ref), policy, train_mode, rng) for ref, _ in pairs]
        ys = torch.tensor([label for _, label in pairs], dtype=torch.long)
        return torch.stack(xs), ys

    support_x, support_y = stack(episode.support)
    query_x, query_y = stack(episode.query)
    return support_x, support_y, query_x, query_y
