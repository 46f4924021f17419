"""Deterministic, hierarchical random streams.

Every unit of work (a chunk of paths, a field realization, a shell) gets its
own Philox stream keyed by ``(seed, *key)``.  Philox is counter based, so the
streams are independent by construction and do not depend on how work is
scheduled across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
import zlib
from typing import Union

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_part(k: int | str) -> int:
    """Integers pass through; labels map to a stable 32-bit hash."""
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8")) | (1 << 32)
    return int(k)


@dataclass(frozen=True)
class StreamFactory:
    """Derives independent generators from a root seed and a key path.

    Key parts are non-negative integers or string labels.
    """

    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "key", tuple(_key_part(k) for k in self.key))

    def child(self, *key: int | str) -> "StreamFactory":
        return StreamFactory(self.seed, self.key + tuple(_key_part(k) for k in key))

    def generator(self, *key: int | str) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + tuple(_key_part(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))


RngLike = Union[int, StreamFactory, np.random.Generator, None]


def as_factory(rng: RngLike) -> StreamFactory:
    """Normalize the accepted RNG arguments to a :class:`StreamFactory`.

    A ``Generator`` is consumed once to draw a root seed, which keeps the
    caller's generator usable and the derived streams reproducible.
    """
    if isinstance(rng, StreamFactory):
        return rng
    if rng is None:
        return StreamFactory(0)
    if isinstance(rng, np.random.Generator):
        return StreamFactory(int(rng.integers(0, 2**63)))
    if isinstance(rng, (int, np.integer)):
        return StreamFactory(int(rng))
    raise TypeError(f"cannot derive random streams from {type(rng).__name__}")


def chunk_bounds(total: int, chunk: int) -> list[tuple[int, int]]:
    """Fixed partition of ``range(total)`` into chunks of at most ``chunk`` items."""
    return [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
