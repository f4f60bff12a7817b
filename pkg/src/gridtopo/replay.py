"""Prioritized experience replay with proportional sampling.

Priorities live in an array-backed sum tree (heap layout: parent holds
the sum of its children, leaves hold priority^alpha), giving O(log n)
insertion, update, and cumulative-sum descent. A twin max tree tracks the
current maximum raw priority exactly, so fresh experiences enter at the
front of the queue before their TD error is known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class SumTree:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def set(self, data_idx: int, value: float) -> None:
        idx = data_idx + self.capacity - 1
        change = value - self.nodes[idx]
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            self.nodes[idx] += change

    def get(self, data_idx: int) -> float:
        return float(self.nodes[data_idx + self.capacity - 1])

    def find(self, cumsum: float) -> int:
        """Leaf whose cumulative-priority interval contains ``cumsum``."""
        idx = 0
        while 2 * idx + 1 < len(self.nodes):
            left = 2 * idx + 1
            if cumsum <= self.nodes[left]:
                idx = left
            else:
                cumsum -= self.nodes[left]
                idx = left + 1
        return idx - (self.capacity - 1)


class MaxTree:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1)

    @property
    def max(self) -> float:
        return float(self.nodes[0])

    def set(self, data_idx: int, value: float) -> None:
        idx = data_idx + self.capacity - 1
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            best = max(self.nodes[2 * idx + 1], self.nodes[2 * idx + 2])
            if self.nodes[idx] == best:
                break
            self.nodes[idx] = best


class PrioritizedBuffer:
    """Ring buffer sampled proportionally to priority^alpha.

    Importance weights are (size * P(i))^(-beta) normalized by the batch
    maximum; beta anneals linearly over ``beta_steps`` sample() calls.
    Terminal experiences are stored ``terminal_copies`` times.
    """

    def __init__(self, capacity: int = 100_000, alpha: float = 0.6,
                 beta_start: float = 0.4, beta_end: float = 1.0,
                 beta_steps: int = 100_000, floor: float = 1e-3,
                 terminal_copies: int = 4, seed: int = 0):
        self.capacity = capacity
        self.alpha = alpha
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.beta_steps = max(beta_steps, 1)
        self.floor = floor
        self.terminal_copies = terminal_copies
        self.rng = np.random.default_rng(seed)

        self.data: list[Experience | None] = [None] * capacity
        self.raw_priority = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.max_tree = MaxTree(capacity)
        self.write = 0
        self.size = 0
        self.insertions = 0          # monotone stamp to detect stale sample indices
        self.stamp = np.full(capacity, -1, dtype=np.int64)
        self.sample_calls = 0

    def __len__(self) -> int:
        return self.size

    @property
    def beta(self) -> float:
        frac = min(self.sample_calls / self.beta_steps, 1.0)
        return self.beta_start + (self.beta_end - self.beta_start) * frac

    def _insert(self, experience: Experience, raw: float) -> None:
        idx = self.write
        self.data[idx] = experience
        self.raw_priority[idx] = raw
        self.tree.set(idx, raw ** self.alpha)
        self.max_tree.set(idx, raw)
        self.stamp[idx] = self.insertions
        self.insertions += 1
        self.write = (self.write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push(self, experience: Experience, priority: float | None = None) -> None:
        raw = priority if priority is not None else (self.max_tree.max or 1.0)
        raw = max(raw, self.floor)
        copies = self.terminal_copies if experience.done else 1
        for _ in range(copies):
            self._insert(experience, raw)

    def sample(self, batch_size: int):
        """Draw ``batch_size`` experiences; returns (items, handles, weights).

        Handles pair the slot index with an insertion stamp so that a
        later update_priorities() silently skips evicted entries.
        """
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch {batch_size}")
        beta = self.beta
        self.sample_calls += 1
        total = self.tree.total
        idx = np.array([self.tree.find(u) for u in self.rng.uniform(0.0, total, batch_size)],
                       dtype=np.intp)
        probs = np.array([self.tree.get(i) for i in idx]) / total
        weights = (self.size * probs) ** (-beta)
        weights = weights / np.max(weights)
        items = [self.data[i] for i in idx]
        handles = [(int(i), int(self.stamp[i])) for i in idx]
        return items, handles, weights

    def update_priorities(self, handles, td_errors) -> None:
        for (idx, stamp), err in zip(handles, np.asarray(td_errors, dtype=float)):
            if self.stamp[idx] != stamp:
                continue
            raw = abs(err) + self.floor
            self.raw_priority[idx] = raw
            self.tree.set(idx, raw ** self.alpha)
            self.max_tree.set(idx, raw)

    def probabilities(self) -> np.ndarray:
        """Exact sampling distribution over resident slots (diagnostics)."""
        leaf = np.array([self.tree.get(i) for i in range(self.size)])
        return leaf / leaf.sum()
