"""Seeded, splittable random streams and order-fixed block parallelism.

Work is cut into fixed-size blocks; block ``i`` always draws from the Philox
stream keyed by ``(seed, purpose, i)`` and results are concatenated in block
order, so output is identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

BLOCK_SIZE = 256

_PURPOSES = {"sample": 1, "train": 2, "ctmc": 3, "data": 4, "probe": 5, "init": 6, "floor": 7}


def stream(seed: int, purpose: str = "sample", index: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, purpose, index) triple."""
    key = (_PURPOSES[purpose], int(index))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def blocks(n: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    return [(i, min(i + block_size, n)) for i in range(0, n, block_size)]


def run_blocks(fn: Callable[[int, int, np.random.Generator], object], n: int, seed: int,
               purpose: str = "sample", threads: int = 1, block_size: int = BLOCK_SIZE) -> list:
    """Call ``fn(start, stop, rng)`` for every block; results in block order."""
    spans = blocks(n, block_size)
    jobs = [(start, stop, stream(seed, purpose, k)) for k, (start, stop) in enumerate(spans)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
