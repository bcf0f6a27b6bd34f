"""Seed derivation and buffered Gaussian draws."""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One round of the splitmix64 finaliser on a 64-bit integer."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def chain_seed(master_seed, chain_index):
    """Seed of chain ``chain_index``; independent of how many chains are run."""
    return splitmix64((int(master_seed) & _MASK64) ^ splitmix64(int(chain_index) + 1))


def stream_seed(seed, stream):
    """Seed for a named sub-stream (dynamics, noise, batches) of one chain."""
    return splitmix64((int(seed) & _MASK64) ^ (splitmix64(int(stream) + 0x5EED) << 1 & _MASK64))


class NormalStream:
    """Standard normals drawn from ``rng`` in blocks.

    The sequence equals successive ``rng.standard_normal()`` calls; blocking
    only removes per-call overhead.
    """

    def __init__(self, rng, block=4096):
        self.rng = rng
        self.block = block
        self._buf = []
        self._pos = 0

    def _refill(self):
        self._buf = self.rng.standard_normal(self.block).tolist()
        self._pos = 0

    def one(self):
        if self._pos >= len(self._buf):
            self._refill()
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def many(self, n):
        out = np.empty(n)
        for i in range(n):
            out[i] = self.one()
        return out
