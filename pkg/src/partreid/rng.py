"""Counter-based deterministic random stream.

The generator is splitmix64 evaluated at ``seed + counter * golden``: every
draw is a pure function of ``(seed, counter)``, so restoring the counter
restores the stream exactly, on any platform. Integer arithmetic wraps
mod 2**64 (numpy uint64 semantics).
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """Deterministic stream of draws addressed by a 64-bit counter."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.counter = int(counter) & _MASK

    def __repr__(self):
        return f"RngStream(seed={self.seed:#x}, counter={self.counter})"

    @property
    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def derive(self, tag: int) -> "RngStream":
        """Independent child stream; same (seed, tag) always yields the same child."""
        z = np.uint64((self.seed ^ ((int(tag) + 1) * _GOLDEN)) & _MASK)
        return RngStream(int(_mix(z)))

    def raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 values."""
        idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(self.counter)
        self.counter = (self.counter + n) & _MASK
        return _mix(np.uint64(self.seed) + idx * np.uint64(_GOLDEN))

    def uniform(self, shape=None) -> np.ndarray | float:
        """float64 in [0, 1), 53-bit resolution."""
        if shape is None:
            return float(self.raw(1)[0] >> np.uint64(11)) * 2.0**-53
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0):
        """Standard Box-Muller on consecutive uniform pairs."""
        scalar = shape is None
        shape = () if scalar else ((shape,) if isinstance(shape, int) else tuple(shape))
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(2, pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0]))  # 1-u maps [0,1) to (0,1]
        theta = _TWO_PI * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = mean + std * z
        return float(z[0]) if scalar else z.reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform int in [0, n). Modulo bias is ~n/2**64, negligible here."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return int(self.raw(1)[0] % np.uint64(n))

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def subset(self, n: int, k: int) -> list[int]:
        """Uniform k-subset of range(n), returned in ascending order."""
        if not 0 <= k <= n:
            raise ValueError(f"subset size {k} out of range for population {n}")
        pool = list(range(n))
        for i in range(k):  # partial Fisher-Yates
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return sorted(pool[:k])

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates; also returns the list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
