"""Image/mask pairing, preprocessing, the train/validation split and batching."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import cv2
import numpy as np

from .raster import read_image

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


class PairingError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SamplePair:
    image_path: Path
    mask_path: Path


@dataclass
class Sample:
    """``image`` is (C, H, W) float64 in [0, 1]; ``mask`` is (H, W) uint8 in {0, 1}."""

    image: np.ndarray
    mask: np.ndarray
    name: str = ""

    @property
    def channels(self) -> int:
        return self.image.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be strictly between 0 and 1")


def _listing(directory: Path) -> List[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def discover_pairs(image_dir, mask_dir) -> List[SamplePair]:
    """Sort both listings and pair them by position."""
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    for d in (image_dir, mask_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a directory")
    images = _listing(image_dir)
    masks = _listing(mask_dir)
    if len(images) != len(masks):
        raise PairingError(
            f"{len(images)} images in {image_dir} but {len(masks)} masks in {mask_dir}")
    if not images:
        raise EmptyDatasetError(f"no images found in {image_dir}")
    return [SamplePair(i, m) for i, m in zip(images, masks)]


def load_sample(pair: SamplePair, target: int = 256) -> Sample:
    """Bilinear-resize and scale the image by 1/255; nearest-resize and binarize the mask (> 128)."""
    img = read_image(pair.image_path).data
    mask = read_image(pair.mask_path).data
    if mask.shape[2] != 1:
        mask = cv2.cvtColor(mask, cv2.COLOR_RGB2GRAY)[:, :, None]
    size = (target, target)
    if img.shape[:2] != size:
        img = cv2.resize(img, size, interpolation=cv2.INTER_LINEAR)
        if img.ndim == 2:
            img = img[:, :, None]
    mask = mask[:, :, 0]
    if mask.shape != size:
        mask = cv2.resize(mask, size, interpolation=cv2.INTER_NEAREST)
    image = img.transpose(2, 0, 1).astype(np.float64) / 255.0
    return Sample(image, (mask > 128).astype(np.uint8), name=pair.image_path.stem)


def split_dataset(items: Sequence, spec: SplitSpec) -> Tuple[list, list]:
    """Seeded shuffle, then the first floor(fraction * N) items go to training."""
    n = len(items)
    if n < 2:
        raise ValueError("need at least two items to split")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = math.floor(spec.train_fraction * n)
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


def make_batches(samples: Sequence, batch_size: int = 8, seed: int = 0,
                 epoch: int = 1) -> List[list]:
    """Shuffle by (seed, epoch) and chunk; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    return [[samples[i] for i in order[s:s + batch_size]]
            for s in range(0, len(samples), batch_size)]


def stack_batch(batch: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in batch])
    y = np.stack([s.mask for s in batch])[:, None].astype(np.float64)
    return x, y


def dataset_hash(pairs: Sequence[SamplePair]) -> str:
    """SHA-256 over the bytes of every paired file, in pairing order."""
    h = hashlib.sha256()
    for p in pairs:
        for path in (p.image_path, p.mask_path):
            h.update(path.name.encode())
            h.update(Path(path).read_bytes())
    return h.hexdigest()
