"""Deterministic random-number streams for parallel pointwise estimation.

Every stochastic evaluation in this package draws its randomness from a
stream identified by (seed, label, chunk index).  Evaluation points are
partitioned into fixed-size chunks (CHUNK points, independent of the
thread count), each chunk owns one PCG64 generator, and samples inside a
chunk are drawn in blocks of SAMPLE_BLOCK in a fixed order.  Results are
therefore bit-identical for any number of worker threads.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Fixed partitioning constants.  Changing them changes the sample streams
# (and hence every Monte Carlo output), so they are frozen here.
CHUNK = 256
SAMPLE_BLOCK = 2048


def label_hash(label: str) -> int:
    """Stable 64-bit hash of a stream label string."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def chunk_rng(seed: int, label: str, chunk_index: int) -> np.random.Generator:
    """Generator for one chunk of evaluation points of one labeled stream."""
    return np.random.default_rng([int(seed) & (2**63 - 1), label_hash(label), int(chunk_index)])


class StreamSpec:
    """Seed plus label; hands out per-chunk generators.

    `derive(suffix)` creates an independent sub-stream, used to keep the
    randomness of different estimator stages (volume term, area term,
    walk, ...) decoupled from one another.
    """

    __slots__ = ("seed", "label")

    def __init__(self, seed: int, label: str):
        self.seed = int(seed)
        self.label = str(label)

    def derive(self, suffix: str) -> "StreamSpec":
        return StreamSpec(self.seed, f"{self.label}/{suffix}")

    def rng(self, chunk_index: int) -> np.random.Generator:
        return chunk_rng(self.seed, self.label, chunk_index)

    def __repr__(self) -> str:
        return f"StreamSpec(seed={self.seed}, label={self.label!r})"
