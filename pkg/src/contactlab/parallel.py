"""Deterministic block-parallel execution.

Work is split into blocks whose content depends only on absolute replica
indices, never on the worker count, so results concatenated in block order
are bit-identical for any --workers setting.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_workers() -> int:
    env = os.environ.get("CONTACTLAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def map_blocks(fn, tasks, workers=1):
    """Map fn over tasks, preserving order; workers <= 1 runs inline."""
    tasks = list(tasks)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))
