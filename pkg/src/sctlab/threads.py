"""Worker-count plumbing for embarrassingly parallel per-channel loops.

Results are deterministic regardless of the worker count: every worker
writes to a disjoint, preallocated output slice and reductions happen in a
fixed order on the caller's side.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_worker_count = 0  # 0 = auto


def set_worker_count(n: int) -> None:
    global _worker_count
    if n < 0:
        raise ValueError("worker count must be >= 0")
    _worker_count = n


def worker_count() -> int:
    return _worker_count if _worker_count > 0 else (os.cpu_count() or 1)


def parallel_channels(func, n_channels: int) -> None:
    """Run func(c) for c in range(n_channels), possibly across threads."""
    workers = min(worker_count(), n_channels)
    if workers <= 1:
        for c in range(n_channels):
            func(c)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(func, range(n_channels)))
