# core/rng.py

from typing import List
import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """
    Counter-based random stream keyed by (seed, stream_id).
    Backed by numpy's Philox generator; the 128-bit key is the pair itself,
    so draws do not depend on platform or thread scheduling.
    Not thread-safe: give each worker its own stream via split().
    """
    generator_name = "numpy.Philox"

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= int(seed) <= _MASK64) or not (0 <= int(stream_id) <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def split(self, n: int) -> List["RngStream"]:
        if n < 1:
            raise ValueError("split needs n >= 1")
        return [RngStream(self.seed, _splitmix64(self.stream_id ^ _splitmix64(i + 1))) for i in range(n)]

    # ---------------- draws ----------------

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def choice(self, n: int, size: int, replace: bool = False, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)
