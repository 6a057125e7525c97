"""Thread-pool plumbing shared by simulation, sampling and benchmarking.

The compiled kernels release the GIL, so plain threads give real parallelism
without the determinism headaches of process pools.  ``PLASTICITY_THREADS``
caps the pool size.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def max_threads() -> int:
    env = os.environ.get("PLASTICITY_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def map_ordered(fn, items, threads=None):
    """Apply ``fn`` to ``items`` on worker threads, keeping input order."""
    items = list(items)
    workers = min(threads or max_threads(), max(1, len(items)))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
