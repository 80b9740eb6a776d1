import numpy as np
import pytest

from core.rng import RngStream
from core.workers import shard_sizes, map_threads, run_sharded_concat


def test_shard_sizes():
    assert shard_sizes(10, 4) == [3, 3, 2, 2]
    assert shard_sizes(2, 8) == [1, 1]
    with pytest.raises(ValueError):
        shard_sizes(0, 2)


def test_map_threads_keeps_order_and_reraises():
    assert map_threads(lambda i: i * i, 6) == [0, 1, 4, 9, 16, 25]

    def fail(i):
        if i >= 2:
            raise RuntimeError(f"shard {i}")
        return i

    with pytest.raises(RuntimeError, match="shard 2"):
        map_threads(fail, 5)


def test_sharded_draws_depend_on_seed_and_shards_only():
    draw = lambda n, s: s.normal(n)
    a = run_sharded_concat(draw, 1001, RngStream(9, 2), n_shards=4)
    b = run_sharded_concat(draw, 1001, RngStream(9, 2), n_shards=4)
    c = run_sharded_concat(draw, 1001, RngStream(9, 3), n_shards=4)
    assert a.shape == (1001,)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_split_streams_are_distinct():
    children = RngStream(5).split(3)
    first = [s.uniform() for s in children]
    assert len(set(first)) == 3
