"""Deterministic parallel evaluation helpers.

Work is distributed with a thread pool sized by the RFDT_THREADS
environment variable (default: logical core count); results are always
consumed in submission order and combined by a fixed pairwise tree, so
outputs are bit-identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_count", "parallel_map", "pairwise_sum"]


def worker_count() -> int:
    env = os.environ.get("RFDT_THREADS")
    if env is not None:
        n = int(env)
        if n < 1:
            raise ValueError("RFDT_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items, workers: int | None = None) -> list:
    """map() preserving order; sequential when one worker."""
    items = list(items)
    n = workers if workers is not None else worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def pairwise_sum(values, zero=0j):
    """Associative sum with a fixed pairwise bracketing.

    The bracketing depends only on the element count, never on worker
    scheduling, so floating-point results are reproducible.
    """
    vals = list(values)
    if not vals:
        return zero
    while len(vals) > 1:
        nxt = []
        for i in range(0, len(vals) - 1, 2):
            nxt.append(vals[i] + vals[i + 1])
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
