"""Datasets: synthetic Gaussian blobs and the CIFAR binary formats."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from gbnn.core import SeededRng

CIFAR_PIXELS = 3072
CIFAR10_RECORD = 1 + CIFAR_PIXELS
CIFAR100_RECORD = 2 + CIFAR_PIXELS
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)
CIFAR100_FILES = {"train": ("train.bin",), "test": ("test.bin",)}


class DatasetError(Exception):
    pass


class CifarFormatError(DatasetError):
    def __init__(self, path, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"{self.path}: {reason} at byte offset {offset}")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.num_classes)


def blob_centers(num_classes: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def make_blobs(num_classes: int, per_class: int, spread: float, rng: SeededRng) -> Dataset:
    """Isotropic Gaussian clusters centred on evenly spaced unit-circle points."""
    if num_classes < 2 or per_class < 1:
        raise ValueError("need num_classes >= 2 and per_class >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    centers = blob_centers(num_classes)
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.normal(0.0, 1.0, size=(len(labels), 2))
    inputs = centers[labels] + spread * noise
    return Dataset(inputs, labels.astype(np.int64), num_classes)


def _read_records(path, record_size: int) -> np.ndarray:
    if not os.path.exists(path):
        raise DatasetError(f"missing CIFAR file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    whole = len(raw) // record_size
    if whole * record_size != len(raw):
        raise CifarFormatError(path, whole * record_size, f"truncated record ({len(raw) - whole * record_size} of {record_size} bytes)")
    return raw.reshape(whole, record_size)


def _pixels(records: np.ndarray) -> np.ndarray:
    # stored channel-major: 1024 R, then G, then B, each 32x32 row-major
    return records[:, -CIFAR_PIXELS:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0


def read_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    records = _read_records(path, CIFAR10_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= 10)
    if len(bad):
        raise CifarFormatError(path, int(bad[0]) * CIFAR10_RECORD, f"label byte {labels[bad[0]]} >= 10")
    return _pixels(records), labels


def read_cifar100_file(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (images, coarse labels, fine labels)."""
    records = _read_records(path, CIFAR100_RECORD)
    coarse = records[:, 0].astype(np.int64)
    fine = records[:, 1].astype(np.int64)
    for name, values, limit, col in (("coarse", coarse, 20, 0), ("fine", fine, 100, 1)):
        bad = np.flatnonzero(values >= limit)
        if len(bad):
            raise CifarFormatError(path, int(bad[0]) * CIFAR100_RECORD + col, f"{name} label {values[bad[0]]} >= {limit}")
    return _pixels(records), coarse, fine


def stratified_subset(labels: np.ndarray, size: int, num_classes: int, rng: SeededRng) -> np.ndarray:
    """Indices of a class-balanced random subset; remainders go to the lowest classes."""
    if size > len(labels):
        raise ValueError("subset larger than dataset")
    base, extra = divmod(size, num_classes)
    picks = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        want = base + (1 if c < extra else 0)
        if want > len(idx):
            raise ValueError(f"class {c} has only {len(idx)} samples, need {want}")
        picks.append(rng.choice(idx, size=want, replace=False))
    return np.sort(np.concatenate(picks))


def load_cifar10(directory, subset_size: int | None = None, rng: SeededRng | None = None, split: str = "train") -> Dataset:
    files = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
    parts = [read_cifar10_file(os.path.join(directory, f)) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    data = Dataset(images, labels, 10)
    if subset_size is not None and subset_size < len(data):
        data = data.subset(stratified_subset(labels, subset_size, 10, rng or SeededRng(0)))
    return data


def load_cifar100_subset(directory, superclass_ids, split: str = "train") -> Dataset:
    """Keep the chosen superclasses and renumber their fine labels densely from 0."""
    wanted = sorted(set(int(s) for s in superclass_ids))
    if not wanted:
        raise ValueError("no classes selected")
    images, coarse, fine = read_cifar100_file(os.path.join(directory, CIFAR100_FILES[split][0]))
    keep = np.isin(coarse, wanted)
    kept_fine = fine[keep]
    fine_ids = np.unique(kept_fine)
    remap = {int(f): i for i, f in enumerate(fine_ids)}
    labels = np.array([remap[int(f)] for f in kept_fine], dtype=np.int64)
    return Dataset(images[keep], labels, len(fine_ids))
