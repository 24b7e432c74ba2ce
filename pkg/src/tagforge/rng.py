"""Deterministic 64-bit PRNG used for every random decision in the pipeline.

The generator is xoshiro256** (Blackman & Vigna), seeded through splitmix64,
so that any implementation in any language can reproduce the exact sequence.
All constants are spelled out below; there is no hidden global state.

splitmix64:
    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

xoshiro256** (state s0..s3, all arithmetic mod 2^64):
    result = rotl(s1 * 5, 7) * 9
    t = s1 << 17
    s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t
    s3 = rotl(s3, 45)

Seeding: the four state words are four successive splitmix64 outputs started
from the user seed. Floats in [0, 1) take the top 53 bits: (x >> 11) * 2^-53.
Bounded integers use plain modulo reduction (documented, bias is irrelevant
at the range sizes used here).
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
_SPLITMIX_MUL2 = 0x94D049BB133111EB
_DOUBLE_SCALE = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _SPLITMIX_GAMMA) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _SPLITMIX_MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _SPLITMIX_MUL2) & _MASK
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *parts: int) -> int:
    """Mix integer components into a sub-seed.

    Each part is folded in with one splitmix64 step, so derived streams for
    different (seed, parts) tuples are decorrelated and reproducible.
    """
    h = seed & _MASK
    for part in parts:
        h ^= part & _MASK
        _, h = splitmix64(h)
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """xoshiro256** generator with splitmix64 seeding."""

    def __init__(self, seed: int):
        state = seed & _MASK
        words = []
        for _ in range(4):
            state, word = splitmix64(state)
            words.append(word)
        self._s = words

    def next_uint64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_float(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_uint64() >> 11) * _DOUBLE_SCALE

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by modulo reduction."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_uint64() % n
