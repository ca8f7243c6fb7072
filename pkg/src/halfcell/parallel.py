"""Thread-pool map honouring the ``HALFCELL_THREADS`` worker cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("HALFCELL_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def pmap(fn, items, workers: int | None = None) -> list:
    """``[fn(i) for i in items]`` evaluated on a thread pool; order preserved."""
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
