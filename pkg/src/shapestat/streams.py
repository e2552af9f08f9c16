"""Seeded RNG streams and optional thread-pool mapping.

Reproducibility scheme: every independent stream is keyed by the user seed
plus an integer index tuple, ``default_rng(SeedSequence((seed,) + key))``.
Replicate j of an experiment always draws from ``stream(seed, j)`` no matter
how many workers run, so results are identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

THREADS_ENV = "SHAPESTAT_THREADS"


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...); same inputs, same stream."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def parallel_map(fn: Callable, items: Sequence | Iterable) -> list:
    """Map fn over items, in a pool if SHAPESTAT_THREADS > 1.

    Results are collected in input order regardless of completion order.
    """
    items = list(items)
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
