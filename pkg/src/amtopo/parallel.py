"""Ordered fan-out of independent per-layer solves."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def map_ordered(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool.

    Results keep the input order, so any reduction over them is performed in
    the same sequence regardless of the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
