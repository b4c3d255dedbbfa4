"""Deterministic random number generation.

A small counter-based generator (splitmix64) drives every random choice
in the package: parameter init, patch shuffling, quantization noise,
and synthetic sensor noise.  The stream for a given seed is fixed by
the algorithm below, independent of platform, word size, or numpy
version, which is what makes end-to-end runs bit-reproducible.

splitmix64 step: the 64-bit state advances by the golden-ratio constant
0x9E3779B97F4A7C15 and the new state is finalized by two xor-shift
multiplications.  Uniform doubles take the top 53 bits of an output
word; Gaussians come from Box-Muller pairs.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    """Finalizer applied to an advanced state word (vectorized)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream with vectorized draws.

    Instances are cheap; derive independent streams for separate
    purposes with spawn() rather than sharing one stream across
    consumers whose draw order might change.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    def next_u64(self) -> int:
        """Single draw as a python int (scalar path)."""
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def u64(self, n: int) -> np.ndarray:
        """n consecutive draws as a uint64 array (vectorized path).

        Produces exactly the same words as n calls to next_u64.
        """
        if n < 0:
            raise ValueError("draw count must be >= 0")
        with np.errstate(over="ignore"):
            states = np.uint64(self._state) + (
                np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            )
            out = _mix(states)
        self._state = (self._state + n * _GAMMA) & _MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), 53-bit resolution."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, n: int) -> np.ndarray:
        """n standard Gaussian doubles via Box-Muller.

        Pair i consumes words (2i, 2i+1): the first maps to (0, 1] for
        the log, the second to [0, 1) for the angle.  An odd n draws
        one full pair and discards the sine half.
        """
        if n == 0:
            return np.zeros(0)
        m = (n + 1) // 2
        words = self.u64(2 * m)
        u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n draws in [0, bound) by modulo reduction.

        The modulo bias is bound/2^64, far below anything observable
        here; taking the simple reduction keeps the stream layout
        trivial to document.
        """
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.u64(n) % np.uint64(bound)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of arange(n), one draw per swap."""
        perm = np.arange(n, dtype=np.int64)
        if n > 1:
            draws = self.u64(n - 1)
            for i in range(n - 1, 0, -1):
                j = int(draws[n - 1 - i] % np.uint64(i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self) -> "Rng":
        """Child stream seeded by one draw from this stream."""
        return Rng(self.next_u64())
