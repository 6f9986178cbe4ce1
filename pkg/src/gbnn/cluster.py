"""Purity-driven granular-ball clustering.

A batch starts as one ball holding every sample. Any ball whose majority
label share is below the purity threshold is split in two, breadth first,
until every ball is pure enough, a singleton, or cannot be split.
"""

from __future__ import annotations

from collections import Counter, deque
from functools import lru_cache
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gbnn.core import GranularBall, LabeledSample, pairwise_squared_distances


@dataclass(frozen=True)
class ClusterConfig:
    purity_threshold: float = 0.8
    max_split_depth: int = 32
    lloyd_max_iters: int = 100
    # balls up to this size are split by exhaustive search over 2-partitions
    exact_split_max_size: int = 10

    def __post_init__(self):
        if not 0.0 < self.purity_threshold <= 1.0:
            raise ValueError("purity_threshold must be in (0, 1]")
        if self.max_split_depth < 1 or self.lloyd_max_iters < 1:
            raise ValueError("max_split_depth and lloyd_max_iters must be positive")
        if self.exact_split_max_size < 0 or self.exact_split_max_size > 20:
            raise ValueError("exact_split_max_size must be in [0, 20]")


def purity(labels: Sequence[int]) -> float:
    if len(labels) == 0:
        raise ValueError("empty label list")
    return Counter(labels).most_common(1)[0][1] / len(labels)


def majority_label(labels: Sequence[int]) -> int:
    """Most frequent label; ties go to the smallest class index."""
    if len(labels) == 0:
        raise ValueError("empty label list")
    counts = Counter(int(v) for v in labels)
    best = max(counts.values())
    return min(label for label, c in counts.items() if c == best)


def make_ball(members, features: np.ndarray, labels, terminal: bool = False) -> GranularBall:
    members = tuple(sorted(int(m) for m in members))
    rows = list(members)
    counts = np.bincount(labels[rows])
    return GranularBall(
        members=members,
        centroid=features[rows].sum(axis=0) / len(rows),
        majority_label=int(np.argmax(counts)),
        purity=int(counts.max()) / len(rows),
        terminal=terminal or len(members) == 1,
    )


def farthest_pair(x: np.ndarray) -> tuple[int, int]:
    """Rows at maximal squared distance, lowest (i, j) pair on ties."""
    d = pairwise_squared_distances(x)
    # the first maximum in row-major order is the lowest (i, j) with i < j
    i, j = divmod(int(np.argmax(d)), len(x))
    return i, j


def lloyd_two_means(x: np.ndarray, max_iters: int) -> np.ndarray | None:
    """Farthest-pair seeded 2-means. Returns 0/1 assignments or None if a side empties."""
    i, j = farthest_pair(x)
    c0, c1 = x[i].copy(), x[j].copy()
    assign = None
    for _ in range(max_iters):
        d0 = np.sum((x - c0) ** 2, axis=1)
        d1 = np.sum((x - c1) ** 2, axis=1)
        new = (d1 < d0).astype(np.int8)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        n1 = int(assign.sum())
        if n1 == 0 or n1 == len(x):
            return None
        c0 = x[assign == 0].mean(axis=0)
        c1 = x[assign == 1].mean(axis=0)
    return assign


@lru_cache(maxsize=None)
def _partition_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    # the last row is pinned to group 0 so each partition appears once
    codes = np.arange(1, 2 ** (n - 1), dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(np.float64)
    masks.flags.writeable = False
    n1 = masks.sum(axis=1)
    n1.flags.writeable = False
    return masks, n1


def exact_two_means(x: np.ndarray) -> np.ndarray:
    """Minimum within-cluster SSE 2-partition by enumeration (small n only)."""
    n = len(x)
    xc = x - x.mean(axis=0)
    masks, n1 = _partition_masks(n)
    n0 = n - n1
    s1 = masks @ xc
    s0 = -s1  # centred data sums to zero
    # SSE = total - |S1|^2/n1 - |S0|^2/n0; total is constant across partitions
    explained = np.sum(s1 * s1, axis=1) / n1 + np.sum(s0 * s0, axis=1) / n0
    best = int(np.argmax(explained))
    return masks[best].astype(np.int8)


def split_ball(samples, config: ClusterConfig):
    """Split a ball of >= 2 samples into two child index sets.

    ``samples`` is either a list of LabeledSample or a 2-D feature array.
    Returns ``(child_a, child_b)`` as tuples of sample indices (batch indices
    for LabeledSample input, row positions for arrays), or ``None`` when no
    spatial split exists.
    """
    if isinstance(samples, np.ndarray):
        x = np.asarray(samples, dtype=np.float64)
        index = np.arange(len(x))
    else:
        x = np.array([s.features for s in samples], dtype=np.float64)
        index = np.array([s.index for s in samples])
    if len(x) < 2:
        raise ValueError("unsplittable")
    if x.ndim != 2:
        raise ValueError("dimension mismatch")

    if np.all(x == x[0]):
        return None
    if len(x) <= config.exact_split_max_size:
        assign = exact_two_means(x)
    else:
        assign = lloyd_two_means(x, config.lloyd_max_iters)
        if assign is None:
            return None
    a = tuple(int(v) for v in index[assign == 0])
    b = tuple(int(v) for v in index[assign == 1])
    if not a or not b:
        return None
    return (a, b) if min(a) < min(b) else (b, a)


def cluster(features, labels=None, config: ClusterConfig | None = None, trace: list | None = None):
    """Partition a batch into granular balls.

    Accepts a feature matrix plus labels, or a list of LabeledSample (in
    which case ball members are the samples' own indices). When ``trace`` is
    a list, each performed split is appended as ``(parent, child_a, child_b)``.
    """
    config = config or ClusterConfig()
    if labels is None:
        samples: list[LabeledSample] = list(features)
        if not samples:
            raise ValueError("empty batch")
        x = np.array([s.features for s in samples], dtype=np.float64)
        y = np.array([s.label for s in samples], dtype=np.int64)
        balls = _cluster_rows(x, y, config, trace)
        ids = [s.index for s in samples]
        return sorted(
            (
                GranularBall(
                    members=tuple(sorted(ids[m] for m in b.members)),
                    centroid=b.centroid,
                    majority_label=b.majority_label,
                    purity=b.purity,
                    terminal=b.terminal,
                )
                for b in balls
            ),
            key=lambda b: b.members[0],
        )
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("empty batch")
    if len(y) != len(x):
        raise ValueError("labels and features differ in length")
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    return _cluster_rows(x, y, config, trace)


def _cluster_rows(x, y, config, trace):
    done: list[GranularBall] = []
    queue = deque([(tuple(range(len(x))), 0)])
    while queue:
        members, depth = queue.popleft()
        counts = np.bincount(y[list(members)])
        if len(members) == 1 or counts.max() / len(members) >= config.purity_threshold:
            done.append(make_ball(members, x, y))
            continue
        if depth >= config.max_split_depth:
            done.append(make_ball(members, x, y, terminal=True))
            continue
        split = split_ball(x[list(members)], config)
        if split is None:
            done.append(make_ball(members, x, y, terminal=True))
            continue
        children = tuple(tuple(members[i] for i in part) for part in split)
        if trace is not None:
            trace.append((members, *children))
        for child in children:
            queue.append((child, depth + 1))
    done.sort(key=lambda b: b.members[0])
    return done
