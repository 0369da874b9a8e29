#!/usr/bin/env python3
"""
Tests for the bounded replay buffer
"""

import sys
import threading
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from errors import BufferNotReadyError
from replay_buffer import ReplayBuffer, TransitionSample


def sample_at(i: int, terminal: bool = False) -> TransitionSample:
    return TransitionSample((i % 19, 0), i % 5, float(terminal), ((i + 1) % 19, 0), terminal)


class TestReplayBuffer:
    """Storage, eviction and sampling"""

    def test_eviction_is_fifo(self):
        """Capacity 3 after 5 pushes holds pushes 2, 3 and 4"""
        buffer = ReplayBuffer(capacity=3, warmup=1)
        for i in range(5):
            buffer.push(sample_at(i))
        assert len(buffer) == 3 and buffer.is_full
        assert buffer.oldest() == sample_at(2)
        assert buffer.get_all().states[:, 0].tolist() == [2, 3, 4]
        assert buffer.get_stats()["evicted"] == 2

    def test_warmup_gate(self):
        """Sampling before the warm-up threshold is refused"""
        buffer = ReplayBuffer(capacity=10, warmup=4)
        for i in range(3):
            buffer.push(sample_at(i))
        assert not buffer.ready()
        with pytest.raises(BufferNotReadyError):
            buffer.sample(2, np.random.default_rng(0))
        buffer.push(sample_at(3))
        batch = buffer.sample(8, np.random.default_rng(0))
        assert len(batch) == 8
        assert set(batch.states[:, 0].tolist()) <= {0, 1, 2, 3}

    def test_sampling_deterministic(self):
        """Same buffer contents and seed give the same batch"""
        buffer = ReplayBuffer(capacity=100, warmup=1)
        for i in range(50):
            buffer.push(sample_at(i, terminal=(i % 7 == 0)))
        first = buffer.sample(16, np.random.default_rng(3))
        second = buffer.sample(16, np.random.default_rng(3))
        assert first.states.tolist() == second.states.tolist()
        assert first.terminals.tolist() == second.terminals.tolist()

    def test_grows_past_initial_allocation(self):
        """Storage grows geometrically and keeps earlier entries"""
        buffer = ReplayBuffer(capacity=10_000, warmup=1)
        for i in range(5000):
            buffer.push(sample_at(i))
        assert len(buffer) == 5000
        assert buffer.get_stats()["allocated"] >= 5000
        assert buffer.oldest() == sample_at(0)

    def test_timeouts_stored(self):
        """Timeout flags survive storage"""
        buffer = ReplayBuffer(capacity=4, warmup=1)
        buffer.push(TransitionSample((1, 1), 4, 0.0, (1, 1), False, True))
        assert buffer.get_all().timeouts.tolist() == [True]
        assert not buffer.get_all().terminals[0]

    def test_invalid_sizes(self):
        """Capacity must be positive and warm-up within capacity"""
        with pytest.raises(ValueError):
            ReplayBuffer(capacity=0)
        with pytest.raises(ValueError):
            ReplayBuffer(capacity=5, warmup=6)

    def test_concurrent_pushes(self):
        """Pushes from several threads are all counted"""
        buffer = ReplayBuffer(capacity=1000, warmup=1)

        def worker(offset):
            for i in range(200):
                buffer.push(sample_at(offset + i))

        threads = [threading.Thread(target=worker, args=(k * 200,)) for k in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(buffer) == 800
        assert buffer.get_stats()["pushed"] == 800

    def test_clear(self):
        """clear empties the buffer"""
        buffer = ReplayBuffer(capacity=4, warmup=1)
        buffer.push(sample_at(0))
        buffer.clear()
        assert len(buffer) == 0 and buffer.oldest() is None
