"""
Random Streams
Counter-based Philox streams addressed by (seed, purpose, key...) so draws never depend on execution order.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

# Rows per simulation block; part of the stream address, so changing it changes results.
ROW_BLOCK = 256

PURPOSES = {
    "simulate": 0,
    "bootstrap": 1,
    "replicate": 2,
    "dequantize": 3,
    "train": 4,
    "subsample": 5,
    "dataset": 6,
}

SLOT_L = 0
SLOT_X = 1
SLOT_Y = 2

_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class RandomStreams:
    """Factory of independent generators derived from one integer seed."""
    seed: int = 0

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))

    def generator(self, purpose: str, *key: int) -> np.random.Generator:
        """Generator for the address ``(seed, purpose, *key)``."""
        if purpose not in PURPOSES:
            raise ValueError(f"Unknown stream purpose '{purpose}'")
        spawn_key = (PURPOSES[purpose],) + tuple(int(k) for k in key)
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=spawn_key)))

    def uniforms(self, purpose: str, slot: int, block: int, shape: Tuple[int, ...]) -> np.ndarray:
        """Uniform draws in the open interval (0, 1) for one (slot, block) address."""
        draws = self.generator(purpose, slot, block).random(shape)
        return np.maximum(draws, _TINY)

    def child(self, purpose: str, index: int) -> "RandomStreams":
        """Independent streams for a sub-task, e.g. one bootstrap replicate."""
        state = np.random.SeedSequence(self.seed, spawn_key=(PURPOSES[purpose], int(index))).generate_state(2, np.uint32)
        return RandomStreams(int(state[0]) << 32 | int(state[1]))


def block_ranges(n: int, block: int = ROW_BLOCK):
    """Yield ``(block_index, start, stop)`` covering rows 0..n-1."""
    for index, start in enumerate(range(0, n, block)):
        yield index, start, min(start + block, n)
