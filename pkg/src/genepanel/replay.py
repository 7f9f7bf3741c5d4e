"""Fixed-capacity prioritized replay memory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SELECT, DISCARD = 0, 1


@dataclass(frozen=True, eq=False)
class Experience:
    s: np.ndarray
    action: int
    reward: float
    s_next: np.ndarray
    priority: float


class PrioritizedBuffer:
    """Ring buffer sampling index i with probability priority_i**exponent / sum.

    No importance-sampling correction is applied.
    """

    def __init__(self, capacity: int = 400, state_dim: int = 64, exponent: float = 0.6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.exponent = exponent
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.priorities = np.zeros(capacity)
        self._size = 0
        self._pos = 0

    def __len__(self):
        return self._size

    def push(self, s, action, reward, s_next, priority: float = 1.0) -> None:
        if not (np.isfinite(priority) and priority > 0):
            raise ValueError(f"priority must be finite and positive, got {priority}")
        i = self._pos
        self.states[i] = s
        self.next_states[i] = s_next
        self.actions[i] = action
        self.rewards[i] = reward
        self.priorities[i] = priority
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def __getitem__(self, i) -> Experience:
        if not 0 <= i < self._size:
            raise IndexError(i)
        return Experience(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i].copy(), float(self.priorities[i]))

    def probabilities(self) -> np.ndarray:
        scaled = self.priorities[: self._size] ** self.exponent
        return scaled / scaled.sum()

    def sample(self, batch_size: int, rng) -> np.ndarray:
        """Indices drawn with replacement by priority."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.choice(self._size, size=batch_size, replace=True, p=self.probabilities())

    def update_priorities(self, indices, priorities) -> None:
        priorities = np.asarray(priorities, dtype=np.float64)
        if not np.all(np.isfinite(priorities)) or np.any(priorities <= 0):
            raise ValueError("priorities must be finite and positive")
        self.priorities[np.asarray(indices)] = priorities
