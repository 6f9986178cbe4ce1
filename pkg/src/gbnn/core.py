"""Shared value types and numeric helpers.

Feature vectors are plain 1-D float64 numpy arrays; batches are 2-D arrays
with one row per sample. Sample indices are always local to one batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def as_feature_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("feature vector must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector contains NaN or Inf")
    return v


def mean_of(vectors: Sequence) -> np.ndarray:
    """Component-wise arithmetic mean of a non-empty list of vectors."""
    if len(vectors) == 0:
        raise ValueError("empty ball")
    dims = {np.shape(v) for v in vectors}
    if len(dims) != 1:
        raise ValueError("dimension mismatch")
    stacked = np.asarray(vectors, dtype=np.float64)
    return stacked.sum(axis=0) / stacked.shape[0]


def squared_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    diff = a - b
    return float(np.sum(diff * diff))


def pairwise_squared_distances(x: np.ndarray) -> np.ndarray:
    # difference form keeps exact zeros for identical rows
    out = np.zeros((len(x), len(x)))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - x[None, :, k]
        out += diff * diff
    return out


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    index: int

    def __post_init__(self):
        object.__setattr__(self, "features", as_feature_vector(self.features))
        if self.label < 0:
            raise ValueError("label must be non-negative")


@dataclass(frozen=True)
class GranularBall:
    """A cluster of batch samples summarised by its centroid and majority label."""

    members: tuple[int, ...]
    centroid: np.ndarray
    majority_label: int
    purity: float
    terminal: bool = False

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("empty ball")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class MembershipMap:
    """Forward-pass record tying each output row to its member input rows.

    ``retained[i]`` holds the batch indices represented by output row ``i``.
    An empty tuple marks a row injected from the replay buffer.
    """

    retained: tuple[tuple[int, ...], ...]
    discarded: frozenset[int]
    input_size: int

    def __post_init__(self):
        seen = set(self.discarded)
        total = len(self.discarded)
        for members in self.retained:
            if len(members) == 1:
                raise ValueError("retained entries need at least 2 members")
            seen.update(members)
            total += len(members)
        if total != len(seen) or seen != set(range(self.input_size)):
            raise ValueError("retained and discarded sets must partition the batch")

    @property
    def output_size(self) -> int:
        return len(self.retained)

    def with_replay(self, count: int) -> "MembershipMap":
        return MembershipMap(
            retained=self.retained + ((),) * count,
            discarded=self.discarded,
            input_size=self.input_size,
        )


@dataclass
class SeededRng:
    """Seeded PCG64 stream (numpy) with JSON-serialisable state.

    PCG64 output is specified bit-for-bit, so a given seed yields the same
    raw draws on every platform.
    """

    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *tags: int) -> "SeededRng":
        """Independent stream derived from this seed and the given tags."""
        seq = np.random.SeedSequence([self.seed, *tags])
        return SeededRng(int(seq.generate_state(1, dtype=np.uint64)[0]))

    def state(self) -> str:
        return json.dumps({"seed": self.seed, "bit_generator": self.generator.bit_generator.state})

    @classmethod
    def from_state(cls, text: str) -> "SeededRng":
        payload = json.loads(text)
        rng = cls(payload["seed"])
        rng.generator.bit_generator.state = payload["bit_generator"]
        return rng

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, x):
        return self.generator.permutation(x)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)
