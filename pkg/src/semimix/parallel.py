"""Static partitioning of replicate indices over worker processes.

Replicate ``r`` always draws from its own stream, and the batch engine treats
rows independently, so the merged result is the same for any worker count.
Workers are forked, which lets tasks close over unpicklable objects such as
user supplied intensity functions.
"""

from __future__ import annotations

import multiprocessing as mp
import os

import numpy as np

WORKERS_ENV = "SEMIMIX_WORKERS"
BLOCK = 1000

_TASK = None


def resolve_workers(requested=None) -> int:
    """Worker count from the argument, else the environment, else 1."""
    if requested is None:
        env = os.environ.get(WORKERS_ENV)
        requested = int(env) if env else 1
    return max(1, int(requested))


def partition(total: int, parts: int):
    """Contiguous ``[start, stop)`` ranges, as equal as possible, in order."""
    parts = max(1, min(parts, total)) if total > 0 else 1
    edges = np.linspace(0, total, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _blocks(start: int, stop: int):
    return [(a, min(a + BLOCK, stop)) for a in range(start, stop, BLOCK)]


def _run_range(bounds):
    start, stop = bounds
    return [_TASK(a, b) for a, b in _blocks(start, stop)]


def run_partitioned(task, total: int, workers: int = 1) -> dict:
    """Evaluate ``task(start, stop)`` over all replicates and merge in order.

    Args:
        task: returns a dict of arrays whose first axis runs over replicates
            ``start..stop-1``.
        total: number of replicates.
        workers: number of processes.

    Returns:
        dict of arrays concatenated in replicate order.
    """
    global _TASK
    ranges = partition(total, workers)
    _TASK = task
    try:
        if len(ranges) <= 1:
            pieces = [_run_range(r) for r in ranges]
        else:
            ctx = mp.get_context("fork")
            with ctx.Pool(len(ranges)) as pool:
                pieces = pool.map(_run_range, ranges)
    finally:
        _TASK = None
    parts = [block for piece in pieces for block in piece]
    if not parts:
        return {}
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}
