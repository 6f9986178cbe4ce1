import numpy as np
import pytest

from gbnn.core import GranularBall, SeededRng
from gbnn.replay import ReplayBuffer, ReplayConfig


def ball(size, label=0, start=0):
    return GranularBall(tuple(range(start, start + size)), np.full(2, float(start)), label, 1.0)


def test_store_counts_large_balls():
    buf = ReplayBuffer(ReplayConfig(min_ball_size=4))
    assert buf.store([ball(s) for s in [1, 2, 3, 4, 5, 6, 1, 1, 4, 4]], batch_id=0) == 5
    assert len(buf) == 5


def test_store_empty():
    buf = ReplayBuffer()
    assert buf.store([], 0) == 0 and len(buf) == 0


def test_fifo_eviction():
    buf = ReplayBuffer(ReplayConfig(capacity=3, min_ball_size=1, sample_count=2))
    buf.store([ball(4, start=i) for i in range(5)], batch_id=0)
    assert [b.centroid[0] for b in buf.snapshot()] == [2.0, 3.0, 4.0]


def test_sample_empty():
    assert ReplayBuffer().sample(SeededRng(0), 16) == []


def test_sample_smaller_buffer():
    buf = ReplayBuffer(ReplayConfig(min_ball_size=1))
    buf.store([ball(4, start=i) for i in range(5)], 0)
    got = buf.sample(SeededRng(0), 16)
    assert sorted(b.centroid[0] for b in got) == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert len(buf) == 5


def test_sample_golden():
    buf = ReplayBuffer(ReplayConfig(capacity=200, min_ball_size=1))
    buf.store([ball(4, start=i) for i in range(100)], 0)
    got = [int(b.centroid[0]) for b in buf.sample(SeededRng(2024), 16)]
    # generated once from the seeded stream
    assert got == [58, 97, 7, 28, 93, 84, 20, 73, 13, 85, 82, 99, 8, 18, 27, 16]
    assert len(set(got)) == 16
    assert got == [int(b.centroid[0]) for b in buf.sample(SeededRng(2024), 16)]


def test_only_large_balls_sampled():
    buf = ReplayBuffer(ReplayConfig(capacity=50, min_ball_size=5, sample_count=10))
    rng = np.random.default_rng(0)
    for batch in range(20):
        buf.store([ball(int(s)) for s in rng.integers(1, 10, 8)], batch)
        assert len(buf) <= 50
    assert all(b.size >= 5 for b in buf.sample(SeededRng(1)))


def test_config_invariants():
    with pytest.raises(ValueError):
        ReplayConfig(capacity=4, sample_count=8)

