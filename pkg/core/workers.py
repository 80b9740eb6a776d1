# core/workers.py

import logging
import threading
import numpy as np
from typing import Callable, List, TypeVar

from core.rng import RngStream
from core.constants import DEFAULT_SHARDS

log = logging.getLogger(__name__)

R = TypeVar("R")


def shard_sizes(n_total: int, n_shards: int) -> List[int]:
    if n_total < 1 or n_shards < 1:
        raise ValueError("n_total and n_shards must be >= 1")
    n_shards = min(n_shards, n_total)
    base, extra = divmod(n_total, n_shards)
    return [base + (1 if i < extra else 0) for i in range(n_shards)]


def map_threads(fn: Callable[[int], R], n_items: int) -> List[R]:
    """
    Runs fn(i) for every i < n_items on its own thread.
    Results come back in index order; the lowest-index error is re-raised
    after every thread has joined.
    """
    results = {}
    errors = {}

    def work(i: int):
        try:
            results[i] = fn(i)
        except Exception as e:
            errors[i] = e

    threads = []
    for i in range(n_items):
        t = threading.Thread(target=work, args=(i,)); t.start(); threads.append(t)
    for t in threads:
        t.join()

    if errors:
        first = min(errors)
        log.error("worker %d of %d failed: %s", first, n_items, errors[first])
        raise errors[first]
    return [results[i] for i in range(n_items)]


def run_sharded(fn: Callable[[int, RngStream], R], n_total: int, rng: RngStream,
                n_shards: int = DEFAULT_SHARDS) -> List[R]:
    """
    Calls fn(count, stream) once per shard with a child stream from rng.split,
    so the output depends on (seed, stream_id, n_shards) only.
    """
    sizes = shard_sizes(n_total, n_shards)
    streams = rng.split(len(sizes))
    return map_threads(lambda i: fn(sizes[i], streams[i]), len(sizes))


def run_sharded_concat(fn: Callable[[int, RngStream], np.ndarray], n_total: int, rng: RngStream,
                       n_shards: int = DEFAULT_SHARDS, axis: int = 0) -> np.ndarray:
    return np.concatenate(run_sharded(fn, n_total, rng, n_shards), axis=axis)
