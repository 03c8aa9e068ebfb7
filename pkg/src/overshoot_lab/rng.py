"""Hierarchical, counter-based random streams.

A stream is addressed by a master seed plus an index path such as
``(experiment, cell, replicate)``.  All but the last path element are hashed
into a Philox key; the last element selects a disjoint block of the Philox
counter space.  Replicate ``i`` of a cell therefore always sees the same
numbers, whichever worker process happens to simulate it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np

Label = Union[int, str]

_U64 = (1 << 64) - 1


def _label_to_int(label: Label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream index must be nonnegative, got {label}")
        return int(label)
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@lru_cache(maxsize=4096)
def _philox_key(master_seed: int, prefix: Tuple[int, ...]) -> np.ndarray:
    ss = np.random.SeedSequence(master_seed, spawn_key=prefix)
    return ss.generate_state(2, np.uint64)


@dataclass(frozen=True)
class RngStream:
    """An addressable random stream.

    Parameters
    ----------
    master_seed : int
        64-bit experiment seed.
    path : tuple of int
        Hierarchical index path; build it with :meth:`child`.
    """

    master_seed: int
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= _U64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @classmethod
    def root(cls, master_seed: int) -> "RngStream":
        return cls(int(master_seed), ())

    def child(self, *labels: Label) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(_label_to_int(x) for x in labels))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        if self.path:
            prefix, last = self.path[:-1], self.path[-1]
        else:
            prefix, last = (), 0
        key = _philox_key(self.master_seed, prefix)
        counter = np.array([0, 0, last & _U64, last >> 64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))
