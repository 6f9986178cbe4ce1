"""Replay buffer of large granular balls from earlier batches."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from gbnn.core import GranularBall, SeededRng


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 1024
    min_ball_size: int = 4
    sample_count: int = 16

    def __post_init__(self):
        if self.capacity < 1 or self.min_ball_size < 1 or self.sample_count < 0:
            raise ValueError("capacity and min_ball_size must be positive, sample_count >= 0")
        if self.capacity < self.sample_count:
            raise ValueError("capacity must be >= sample_count")


@dataclass(frozen=True)
class StoredBall:
    centroid: np.ndarray
    label: int
    size: int
    batch_id: int


class ReplayBuffer:
    """FIFO store of balls with at least ``min_ball_size`` members.

    Sampling never removes entries; only overflow evicts the oldest ones.
    """

    def __init__(self, config: ReplayConfig | None = None):
        self.config = config or ReplayConfig()
        self._items: deque[StoredBall] = deque(maxlen=self.config.capacity)

    def __len__(self):
        return len(self._items)

    def store(self, balls: list[GranularBall], batch_id: int) -> int:
        stored = 0
        for ball in balls:
            if ball.size >= self.config.min_ball_size:
                self._items.append(
                    StoredBall(np.array(ball.centroid, dtype=np.float64), ball.majority_label, ball.size, batch_id)
                )
                stored += 1
        return stored

    def sample(self, rng: SeededRng, n: int | None = None) -> list[StoredBall]:
        n = self.config.sample_count if n is None else n
        k = min(n, len(self._items))
        if k == 0:
            return []
        picks = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[int(i)] for i in picks]

    def snapshot(self) -> list[StoredBall]:
        return list(self._items)
