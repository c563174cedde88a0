"""Deterministic 64-bit PRNG used for train/test splits and bootstrap resampling.

The generator is xoshiro256** seeded through splitmix64, so the exact same
shuffles and resamples can be reproduced from a single integer seed on any
platform, independent of numpy's generator lineup.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** with the state initialised from splitmix64(seed)."""

    def __init__(self, seed: int):
        seed &= _MASK64
        state = seed
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias (rejection sampling)."""
        if n <= 0:
            raise ValueError(f"randbelow requires n >= 1, got {n}")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle (back to front)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def integers(self, n: int, count: int) -> list[int]:
        """`count` independent draws from [0, n)."""
        return [self.randbelow(n) for _ in range(count)]


def derive_seed(master: int, *path: int) -> int:
    """Stable child seed for substreams (per tree, per epoch, ...).

    Each path component advances a splitmix64 chain, so (seed, 0) and
    (seed, 1) land in unrelated parts of the sequence.
    """
    state = master & _MASK64
    out = 0
    for component in path:
        state, out = splitmix64(state ^ (component & _MASK64))
    if not path:
        state, out = splitmix64(state)
    return out
