"""Order-preserving worker pool for per-example fan-out.

Results never depend on the worker count: every item owns a derived
randomness stream keyed by its index, so scheduling cannot reorder draws.
``PLAB_THREADS`` caps the pool (default: min(4, cpu count)).
"""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    env = os.environ.get("PLAB_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def parallel_map(fn, items):
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
