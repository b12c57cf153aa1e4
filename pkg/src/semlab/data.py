"""Synthetic image data and an optional CIFAR-10 binary reader.

The synthetic set is a stand-in for a real benchmark: C high-contrast 8x8
single-channel template patterns, one per class, plus per-sample Gaussian
jitter clipped back into [0,1]. Templates are far apart in l2 so noisy
training at large sigma still has signal to find.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

IMAGE_SIZE = 8
_LO, _HI = 0.1, 0.9

# boolean masks on an 8x8 grid, one pattern per class
_TEMPLATE_MASKS = (
    lambda r, c: (r // 2) % 2 == 0,                            # horizontal bars
    lambda r, c: (c // 2) % 2 == 0,                            # vertical bars
    lambda r, c: ((r // 2) + (c // 2)) % 2 == 0,               # checkerboard
    lambda r, c: (2 <= r) & (r <= 5) & (2 <= c) & (c <= 5),    # center block
    lambda r, c: (r == 0) | (r == 7) | (c == 0) | (c == 7),    # ring
    lambda r, c: np.abs(r - c) <= 1,                           # diagonal band
    lambda r, c: np.abs(r + c - 7) <= 1,                       # anti-diagonal
    lambda r, c: r < 4,                                        # top half
    lambda r, c: c < 4,                                        # left half
    lambda r, c: (r == 3) | (r == 4) | (c == 3) | (c == 4),    # plus
)

MAX_CLASSES = len(_TEMPLATE_MASKS)


def class_template(label: int, contrast: float = _HI - _LO) -> np.ndarray:
    """The noise-free (1,8,8) pattern for one class.

    contrast is the hi-lo pixel gap, centered on 0.5; smaller values make
    classes harder to tell apart relative to a fixed jitter level.
    """
    if not 0 <= label < MAX_CLASSES:
        raise ValueError(f"label must be in [0,{MAX_CLASSES}), got {label}")
    if not 0.0 < contrast <= 1.0:
        raise ValueError("contrast must be in (0,1]")
    r, c = np.meshgrid(np.arange(IMAGE_SIZE), np.arange(IMAGE_SIZE), indexing="ij")
    mask = _TEMPLATE_MASKS[label](r, c)
    hi, lo = 0.5 + contrast / 2.0, 0.5 - contrast / 2.0
    return np.where(mask, hi, lo)[None, :, :].astype(np.float64)


@dataclass(frozen=True)
class SyntheticDataset:
    """Labeled image batch with a train/test split tag per sample."""

    images: np.ndarray  # (n, 1, H, W) float64 in [0,1]
    labels: np.ndarray  # (n,) int
    split: np.ndarray   # (n,) str, "train" or "test"

    def __post_init__(self):
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise ValueError("images/labels/split lengths disagree")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("pixel values must lie in [0,1]")

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == tag
        return self.images[mask], self.labels[mask]

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.subset("train")

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.subset("test")


def gen_dataset(
    class_count: int,
    per_class: int,
    jitter_sigma: float = 0.08,
    seed: int = 0,
    train_fraction: float = 0.75,
    contrast: float = _HI - _LO,
) -> SyntheticDataset:
    """Deterministic synthetic dataset: balanced classes, disjoint splits.

    jitter_sigma=0 makes every sample of a class identical to its template.
    """
    if not 2 <= class_count <= MAX_CLASSES:
        raise ValueError(f"class_count must be in [2,{MAX_CLASSES}]")
    if per_class < 2:
        raise ValueError("need at least 2 samples per class")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0,1)")
    rng = stream(seed, "data", class_count, per_class)
    images, labels, split = [], [], []
    n_train = max(1, min(per_class - 1, int(round(per_class * train_fraction))))
    for label in range(class_count):
        base = class_template(label, contrast)
        jitter = (
            rng.normal(0.0, jitter_sigma, size=(per_class,) + base.shape)
            if jitter_sigma > 0
            else np.zeros((per_class,) + base.shape)
        )
        images.append(np.clip(base[None] + jitter, 0.0, 1.0))
        labels.append(np.full(per_class, label, dtype=np.int64))
        split.append(
            np.array(["train"] * n_train + ["test"] * (per_class - n_train))
        )
    return SyntheticDataset(
        images=np.concatenate(images),
        labels=np.concatenate(labels),
        split=np.concatenate(split),
    )


def load_cifar10_binary(paths) -> tuple[np.ndarray, np.ndarray]:
    """Read CIFAR-10 binary batch files (1 label byte + 3072 RGB bytes per
    record) into ((n,3,32,32) float64 images in [0,1], (n,) labels)."""
    if isinstance(paths, (str, bytes)):
        paths = [paths]
    images, labels = [], []
    record = 1 + 3072
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % record:
            raise ValueError(f"{path}: not a whole number of 3073-byte records")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(arr[:, 0].astype(np.int64))
        images.append(arr[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    return np.concatenate(images), np.concatenate(labels)
