"""Chunked thread-pool mapping over evaluation points.

The chunk size is fixed by streams.CHUNK so that the work partitioning
(and with it every random stream) does not depend on the thread count;
threads only change the scheduling of chunks.  numpy releases the GIL on
large array operations, which is where virtually all the time is spent.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .streams import CHUNK

_ENV_VAR = "MCFLOW_THREADS"


def default_threads() -> int:
    env = os.environ.get(_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def map_chunks(
    fn: Callable[[int, int, int], np.ndarray],
    n_items: int,
    threads: int | None = None,
) -> list[np.ndarray]:
    """Run fn(chunk_index, start, stop) over fixed-size chunks of [0, n_items).

    Returns the per-chunk results in chunk order regardless of which
    thread computed them.
    """
    threads = default_threads() if threads is None else max(1, threads)
    spans = [(i, s, min(s + CHUNK, n_items)) for i, s in enumerate(range(0, n_items, CHUNK))]
    if not spans:
        return []
    if threads == 1 or len(spans) == 1:
        return [fn(*span) for span in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda span: fn(*span), spans))


def map_points(
    fn: Callable[[int, int, int], np.ndarray],
    n_items: int,
    threads: int | None = None,
) -> np.ndarray:
    """Like map_chunks but concatenates the chunk results along axis 0."""
    parts = map_chunks(fn, n_items, threads)
    if not parts:
        return np.zeros((0,))
    return np.concatenate(parts, axis=0)
