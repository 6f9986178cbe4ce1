"""Symmetric label-noise injection with a ground-truth mask."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

from gbnn.cluster import majority_label
from gbnn.core import SeededRng

MASK_HEADER = ("index", "clean_label", "noisy_label", "corrupted")


@dataclass(frozen=True)
class NoiseMask:
    clean_label: np.ndarray
    noisy_label: np.ndarray
    ratio: float
    seed: int

    @property
    def corrupted(self) -> np.ndarray:
        return self.noisy_label != self.clean_label

    def __len__(self):
        return len(self.clean_label)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MASK_HEADER)
            for i, (c, n) in enumerate(zip(self.clean_label, self.noisy_label)):
                writer.writerow((i, int(c), int(n), "true" if c != n else "false"))

    @classmethod
    def from_csv(cls, path, ratio: float = float("nan"), seed: int = 0) -> "NoiseMask":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        clean = np.array([int(r["clean_label"]) for r in rows], dtype=np.int64)
        noisy = np.array([int(r["noisy_label"]) for r in rows], dtype=np.int64)
        return cls(clean, noisy, ratio, seed)


def round_half_up(value: float, count: int) -> int:
    exact = Decimal(repr(value)) * count
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def corrupt_labels(labels, num_classes: int, ratio: float, rng: SeededRng, stratified: bool = True) -> NoiseMask:
    """Reassign a fixed share of labels to a uniformly drawn different class.

    With ``stratified`` each class gives up exactly round(ratio * class size)
    samples, so the corruption is spread evenly over the classes.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must be in [0, 1)")
    clean = np.asarray(labels, dtype=np.int64)
    if clean.size and (clean.min() < 0 or clean.max() >= num_classes):
        raise ValueError("label out of range")

    if stratified:
        chosen = []
        for c in range(num_classes):
            idx = np.flatnonzero(clean == c)
            k = round_half_up(ratio, len(idx))
            if k:
                chosen.append(np.sort(rng.choice(idx, size=k, replace=False)))
        picked = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    else:
        k = round_half_up(ratio, len(clean))
        picked = np.sort(rng.choice(len(clean), size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)

    noisy = clean.copy()
    if len(picked):
        # draw from the other num_classes - 1 classes by skipping the clean one
        draw = rng.integers(0, num_classes - 1, size=len(picked))
        noisy[picked] = draw + (draw >= clean[picked])
    return NoiseMask(clean_label=clean, noisy_label=noisy, ratio=ratio, seed=rng.seed)


def effective_noise_rate(targets: Iterable[tuple[int, Sequence[int]]]) -> float:
    """Share of training targets whose label disagrees with their members' clean majority."""
    total = wrong = 0
    for assigned, clean_members in targets:
        total += 1
        if len(clean_members) == 0:
            raise ValueError("target with no members")
        if int(assigned) != majority_label(clean_members):
            wrong += 1
    if total == 0:
        raise ValueError("no targets")
    return wrong / total
