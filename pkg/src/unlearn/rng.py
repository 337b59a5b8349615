"""Pinned counter-based SplitMix64 generator.

Every random draw in the package goes through :class:`SplitMix64` so that
results depend only on integer seeds. The stream for a seed ``s`` is
``mix64(s + i * GOLDEN)`` for ``i = 1, 2, ...``, which makes block draws
vectorizable with numpy's wrapping ``uint64`` arithmetic.

Floats are ``(u >> 11) * 2**-53`` (53-bit, half-open ``[0, 1)``); bounded
integers are ``floor(u01 * n)``; normals are Box-Muller pairs. Bitwise
reproducibility is guaranteed within this implementation only.
"""
from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_SPLIT_SALT = 0x243F6A8885A308D3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(master: int, index: int) -> int:
    """Seed of the ``index``-th independent child stream of ``master``."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    base = mix64(master ^ _SPLIT_SALT)
    return mix64(base + GOLDEN * (index + 1))


class SplitMix64:
    __slots__ = ("seed", "_counter")

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed <= _MASK:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._counter = 0

    def spawn(self, index: int) -> "SplitMix64":
        return SplitMix64(derive_seed(self.seed, index))

    def u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        start = self._counter
        self._counter += n
        steps = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = steps * np.uint64(GOLDEN) + np.uint64(self.seed)
            return _mix64_array(state)

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles in ``[0, 1)``."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def integers(self, upper: int, n: int) -> np.ndarray:
        """``n`` integers in ``[0, upper)``; bias is at most ``upper / 2**53``."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        out = np.floor(self.random(n) * upper).astype(np.int64)
        return np.minimum(out, upper - 1)

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller (cos/sin pairs interleaved)."""
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.u64(n)
        return np.argsort(keys, kind="stable")
