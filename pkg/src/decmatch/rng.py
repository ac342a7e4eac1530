"""Counter-based SplitMix64 streams and stable seed derivation.

Draw ``k`` of a stream keyed by ``seed`` is ``mix64(seed + (k + 1) * GOLDEN)``.
Both kernel backends implement exactly this, so a seed reproduces a run
bit-for-bit whichever backend executes it.
"""
from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def below(self, k: int) -> int:
        """Integer in ``[0, k)``; exact for ``k < 2**11`` via a 53-bit multiply-shift."""
        return ((self.next_u64() >> 11) * k) >> 53

    def unit(self) -> float:
        return (self.next_u64() >> 11) * INV_2_53


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any sequence of printable parts."""
    body = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")
