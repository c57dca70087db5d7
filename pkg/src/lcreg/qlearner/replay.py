"""FIFO replay of global transitions.

A transition stores whole grid fields rather than per-agent observation
windows: the normalised feature field (lanes, grids, 4) of s_t and s_{t+1},
the joint action field and the reward field. Observation windows are cut out
again when a batch is sampled, which keeps the buffer ~60x smaller.
"""

from __future__ import annotations

import numpy as np

from ..gridstate import FEATURES


class ReplayBuffer:
    def __init__(self, capacity: int, n_lanes: int, n_grids: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        shape = (self.capacity, n_lanes, n_grids)
        self.state = np.zeros(shape + (len(FEATURES),), dtype=np.float32)
        self.next_state = np.zeros_like(self.state)
        self.action = np.zeros(shape, dtype=np.int8)
        self.reward = np.zeros(shape, dtype=np.float32)
        self.done = np.zeros(self.capacity, dtype=bool)
        self.valid = np.zeros(self.capacity, dtype=bool)
        self.pos = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)
        self._mark = None
        self._added: list = []

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, done: bool) -> None:
        i = self.pos
        if not self.valid[i]:
            self.valid[i] = True
            self.size += 1
        self.state[i] = state
        self.action[i] = action
        self.reward[i] = reward
        self.next_state[i] = next_state
        self.done[i] = done
        self.pos = (i + 1) % self.capacity
        if self._mark is not None:
            self._added.append(i)

    def sample(self, batch_size: int):
        """Uniform sample of stored global transitions (with replacement)."""
        if self.size < 1:
            raise ValueError("cannot sample from an empty buffer")
        if self.size == self.capacity or (self.size == self.pos and self.valid[: self.pos].all()):
            idx = self.rng.integers(0, self.size, batch_size)
        else:
            slots = np.flatnonzero(self.valid)
            idx = slots[self.rng.integers(0, slots.size, batch_size)]
        return (self.state[idx], self.action[idx], self.reward[idx], self.next_state[idx], self.done[idx])

    # episode-level rollback, used to discard the transitions of a faulted episode
    def mark(self) -> None:
        self._mark = self.pos
        self._added = []

    def rollback(self) -> int:
        """Drop everything added since ``mark``; returns how many transitions were dropped.

        Older entries overwritten in the meantime are lost, not restored.
        """
        if self._mark is None:
            return 0
        for i in set(self._added):
            if self.valid[i]:
                self.valid[i] = False
                self.size -= 1
        dropped = len(self._added)
        self.pos = self._mark
        self._mark = None
        self._added = []
        return dropped
