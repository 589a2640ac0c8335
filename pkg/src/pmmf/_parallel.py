"""Order-preserving parallel map over contiguous chunks of work items."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def pmap(fn, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, split into one contiguous chunk per worker.

    Results come back in input order, so callers see the same output for any
    ``threads``.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    nchunk = min(threads, len(items))
    step = -(-len(items) // nchunk)
    chunks = [items[i:i + step] for i in range(0, len(items), step)]
    with ThreadPoolExecutor(max_workers=nchunk) as pool:
        parts = list(pool.map(lambda chunk: [fn(x) for x in chunk], chunks))
    return [r for part in parts for r in part]
