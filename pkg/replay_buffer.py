#!/usr/bin/env python3
"""
Replay Buffer

Thread-safe bounded ring of transitions with uniform sampling. Storage is a
set of column arrays that grow geometrically up to the capacity, after which
the oldest entries are overwritten first.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from errors import BufferNotReadyError

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1_000_000
DEFAULT_WARMUP = 2000
_INITIAL_ALLOCATION = 4096


class TransitionSample(NamedTuple):
    """One stored (s, a, r, s', done) record"""
    state: tuple
    action: int
    reward: float
    next_state: tuple
    terminal: bool  # s' is the goal
    timeout: bool = False  # episode cut by the step cap; still bootstraps


@dataclass
class TransitionBatch:
    """Column-wise batch of transitions"""
    states: np.ndarray  # (B, 2) int
    actions: np.ndarray  # (B,) int
    rewards: np.ndarray  # (B,) float
    next_states: np.ndarray  # (B, 2) int
    terminals: np.ndarray  # (B,) bool
    timeouts: np.ndarray  # (B,) bool

    def __len__(self) -> int:
        return len(self.actions)

    def subset(self, indices: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(
            self.states[indices], self.actions[indices], self.rewards[indices],
            self.next_states[indices], self.terminals[indices], self.timeouts[indices],
        )

    @classmethod
    def from_samples(cls, samples) -> "TransitionBatch":
        samples = list(samples)
        return cls(
            states=np.array([s.state for s in samples], dtype=np.int64).reshape(-1, 2),
            actions=np.array([s.action for s in samples], dtype=np.int64),
            rewards=np.array([s.reward for s in samples], dtype=np.float64),
            next_states=np.array([s.next_state for s in samples], dtype=np.int64).reshape(-1, 2),
            terminals=np.array([s.terminal for s in samples], dtype=bool),
            timeouts=np.array([s.timeout for s in samples], dtype=bool),
        )


class ReplayBuffer:
    """
    Bounded FIFO transition store.

    Sampling is uniform with replacement and refused until `warmup` entries
    have been pushed.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, warmup: int = DEFAULT_WARMUP):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if not 0 <= warmup <= capacity:
            raise ValueError(f"warmup must lie in [0, capacity], got {warmup}")
        self.capacity = capacity
        self.warmup = warmup
        self._lock = threading.Lock()
        self._size = 0
        self._next = 0
        self._pushed = 0
        self._allocate(min(capacity, _INITIAL_ALLOCATION))

    def _allocate(self, n: int) -> None:
        old = getattr(self, "_states", None)
        states = np.zeros((n, 2), dtype=np.int64)
        actions = np.zeros(n, dtype=np.int64)
        rewards = np.zeros(n, dtype=np.float64)
        next_states = np.zeros((n, 2), dtype=np.int64)
        terminals = np.zeros(n, dtype=bool)
        timeouts = np.zeros(n, dtype=bool)
        if old is not None:
            k = self._size
            states[:k] = self._states[:k]
            actions[:k] = self._actions[:k]
            rewards[:k] = self._rewards[:k]
            next_states[:k] = self._next_states[:k]
            terminals[:k] = self._terminals[:k]
            timeouts[:k] = self._timeouts[:k]
        self._states, self._actions, self._rewards = states, actions, rewards
        self._next_states, self._terminals, self._timeouts = next_states, terminals, timeouts

    def push(self, sample: TransitionSample) -> None:
        """Store a transition, evicting the oldest one at capacity"""
        with self._lock:
            if self._size == len(self._actions) and self._size < self.capacity:
                self._allocate(min(self.capacity, 2 * len(self._actions)))
            i = self._next
            self._states[i] = sample.state
            self._actions[i] = sample.action
            self._rewards[i] = sample.reward
            self._next_states[i] = sample.next_state
            self._terminals[i] = sample.terminal
            self._timeouts[i] = sample.timeout
            self._next = (i + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
            self._pushed += 1

    def ready(self) -> bool:
        return self._size >= self.warmup and self._size > 0

    def _ordered_indices(self) -> np.ndarray:
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self._size) + self._next) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """
        Uniform sample with replacement.

        Raises:
            BufferNotReadyError: Before the warm-up threshold is reached
        """
        with self._lock:
            if not self.ready():
                raise BufferNotReadyError(
                    f"Replay buffer holds {self._size} transitions, needs {max(self.warmup, 1)} before sampling"
                )
            idx = rng.integers(self._size, size=batch_size)
            # sample positions refer to insertion order, oldest first
            idx = self._ordered_indices()[idx]
            return self._gather(idx)

    def _gather(self, idx: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            self._states[idx].copy(), self._actions[idx].copy(), self._rewards[idx].copy(),
            self._next_states[idx].copy(), self._terminals[idx].copy(), self._timeouts[idx].copy(),
        )

    def get_all(self) -> TransitionBatch:
        """Every stored transition, oldest first"""
        with self._lock:
            return self._gather(self._ordered_indices())

    def oldest(self) -> Optional[TransitionSample]:
        with self._lock:
            if self._size == 0:
                return None
            i = int(self._ordered_indices()[0])
            return TransitionSample(
                tuple(int(v) for v in self._states[i]), int(self._actions[i]), float(self._rewards[i]),
                tuple(int(v) for v in self._next_states[i]), bool(self._terminals[i]), bool(self._timeouts[i]),
            )

    def clear(self) -> None:
        with self._lock:
            self._size = 0
            self._next = 0

    def __len__(self) -> int:
        with self._lock:
            return self._size

    @property
    def is_full(self) -> bool:
        with self._lock:
            return self._size == self.capacity

    def get_stats(self) -> Dict[str, Any]:
        """Get buffer statistics"""
        with self._lock:
            return {
                "length": self._size,
                "capacity": self.capacity,
                "warmup": self.warmup,
                "pushed": self._pushed,
                "evicted": max(self._pushed - self.capacity, 0),
                "allocated": len(self._actions),
                "is_full": self._size == self.capacity,
                "terminal_fraction": float(self._terminals[:self._size].mean()) if self._size else 0.0,
            }
