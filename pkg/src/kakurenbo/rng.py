"""Deterministic pseudo-random stream used by training runs.

The run stream is xoshiro256** seeded through splitmix64, implemented in
plain Python on 64-bit unsigned arithmetic so the byte-for-byte sequence is
identical on every platform.  Everything a run draws (weight init, epoch
shuffles, comparator sampling) comes from one instance of
:class:`Xoshiro256StarStar`, which makes the draw order part of the
reproducibility contract.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """One output of the splitmix64 sequence whose *previous* state is given.

    Advancing is the caller's job: state_{n+1} = (state_n + 0x9E37..) mod 2^64,
    output_n = splitmix64(state_{n+1}).
    """
    z = (state + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** generator with splitmix64 state expansion.

    `seed` may be any Python int; it is folded to 64 bits.  The four state
    words are the first four splitmix64 outputs, so distinct seeds give
    well-separated states even for small seed values.
    """

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        s = seed & MASK64
        words = []
        for _ in range(4):
            s = (s + _GOLDEN) & MASK64
            z = ((s ^ (s >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
            words.append(z ^ (z >> 31))
        self._s = words

    def next_raw(self) -> int:
        """Next 64-bit unsigned output."""
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_raw() >> 11) * 2.0**-53

    def randoms(self, n: int) -> list[float]:
        return [self.random() for _ in range(n)]

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_raw()
            if r < limit:
                return r % n

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def shuffle(self, arr) -> None:
        """In-place Fisher-Yates shuffle of a sequence or 1-d array."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.randbelow(i + 1)
            arr[i], arr[j] = arr[j], arr[i]

    def getstate(self) -> tuple[int, int, int, int]:
        return tuple(self._s)
