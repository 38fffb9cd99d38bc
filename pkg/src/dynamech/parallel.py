"""Deterministic worker pool.

DYNAMECH_THREADS caps the worker count (0 = auto, unset = serial).
Work items carry their own stream addresses, so results are identical
for any worker count; the pool only changes wall-clock overlap.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_count", "parallel_map"]


def worker_count() -> int:
    raw = os.environ.get("DYNAMECH_THREADS")
    if raw is None or raw == "":
        return 1
    n = int(raw)
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def parallel_map(fn, items):
    """Map preserving order; results do not depend on the worker count."""
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
