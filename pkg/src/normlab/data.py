"""Dataset ingestion, synthetic data, and mini-batch iteration.

The on-disk format is the CIFAR-10 binary layout: records of 3,073 bytes,
one label byte followed by 3,072 pixel bytes (full red plane, then green,
then blue, each row-major 32x32). Pixels are scaled to [0, 1] on load.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError
from .tensor import Tensor

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
NUM_CLASSES = 10

TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    """Images as one [n,3,H,W] float64 array in [0,1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self, num_classes: int = NUM_CLASSES) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


def read_records(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary file into ([n,3,32,32] floats in [0,1], [n] labels)."""
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: size {raw.size} is not a positive multiple of {RECORD_BYTES}"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= NUM_CLASSES:
        raise FormatError(f"{path}: label {labels.max()} out of range [0, {NUM_CLASSES})")
    images = records[:, 1:].reshape(-1, *IMAGE_SHAPE).astype(np.float64) / 255.0
    return images, labels


def write_records(images: np.ndarray, labels: np.ndarray, path: str | os.PathLike) -> None:
    """Emit the binary record format (pixels are quantized to the u8 grid)."""
    n = len(labels)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = np.asarray(labels, dtype=np.uint8)
    pixels = np.rint(np.asarray(images, dtype=np.float64) * 255.0)
    records[:, 1:] = pixels.reshape(n, -1).astype(np.uint8)
    records.tofile(os.fspath(path))


def load_cifar10(directory: str | os.PathLike) -> tuple[Dataset, Dataset]:
    """Load the five training files and the test file from ``directory``."""
    directory = os.fspath(directory)
    train_parts = [read_records(os.path.join(directory, f)) for f in TRAIN_FILES]
    train = Dataset(
        np.concatenate([p[0] for p in train_parts]),
        np.concatenate([p[1] for p in train_parts]),
        split="train",
    )
    test_images, test_labels = read_records(os.path.join(directory, TEST_FILE))
    return train, Dataset(test_images, test_labels, split="validation")


def class_balanced_subset(dataset: Dataset, size: int) -> Dataset:
    """First ``size // k`` examples of each class, in original order."""
    k = NUM_CLASSES
    if size % k != 0:
        raise ConfigError(f"subset size {size} is not a multiple of {k} classes")
    per_class = size // k
    chosen: list[int] = []
    counts = [0] * k
    for i, label in enumerate(dataset.labels):
        if counts[label] < per_class:
            counts[label] += 1
            chosen.append(i)
        if len(chosen) == size:
            break
    if len(chosen) < size:
        raise ConfigError(
            f"dataset has too few examples per class for a {size}-image subset"
        )
    idx = np.array(chosen)
    return Dataset(dataset.images[idx], dataset.labels[idx], dataset.split)


def make_synthetic(
    n: int, num_classes: int = 10, image_size: int = 32, seed: int = 0
) -> Dataset:
    """Class-conditional Gaussian blobs, linearly separable by channel means.

    Labels are assigned round-robin (example i gets class i mod K). Pixels
    are quantized to the u8 grid so datasets survive a round trip through
    the binary record format bitwise.
    """
    if n < num_classes:
        raise ConfigError(f"need at least one example per class: n={n}, k={num_classes}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % num_classes
    theta = 2.0 * np.pi * labels / num_classes
    denominator = max(num_classes - 1, 1)
    channel_means = np.stack(
        [
            0.5 + 0.3 * np.cos(theta),
            0.5 + 0.3 * np.sin(theta),
            0.2 + 0.6 * labels / denominator,
        ],
        axis=1,
    )
    images = channel_means[:, :, None, None] + 0.06 * rng.standard_normal(
        (n, 3, image_size, image_size)
    )
    images = np.clip(images, 0.0, 1.0)
    images = np.rint(images * 255.0) / 255.0
    return Dataset(images, labels, split="train")


class BatchIterator:
    """Single-consumer epoch iterator with a per-epoch shuffle seed."""

    def __init__(
        self,
        dataset: Dataset,
        batch_size: int,
        seed: int = 0,
        drop_last: bool = True,
    ):
        if batch_size < 1 or batch_size > len(dataset):
            raise ConfigError(
                f"batch size {batch_size} out of range for {len(dataset)} examples"
            )
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.drop_last = drop_last

    def batches_per_epoch(self) -> int:
        n, m = len(self.dataset), self.batch_size
        return n // m if self.drop_last else -(-n // m)

    def epoch_indices(self, epoch: int) -> np.ndarray:
        """The (possibly truncated) example permutation for one epoch."""
        perm = np.random.default_rng(self.seed + epoch).permutation(len(self.dataset))
        if self.drop_last:
            perm = perm[: self.batches_per_epoch() * self.batch_size]
        return perm

    def epoch(self, epoch: int) -> Iterator[tuple[Tensor, np.ndarray]]:
        perm = self.epoch_indices(epoch)
        m = self.batch_size
        for start in range(0, len(perm), m):
            idx = perm[start : start + m]
            yield Tensor(self.dataset.images[idx]), self.dataset.labels[idx]
