"""splitmix64: tiny seedable generator used for all randomized draws.

Chosen for bit-exact reproducibility across implementations; statistical
(not cryptographic) quality is all that is required here.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB


class SplitMix64:
    """The standard splitmix64 stream: state += golden gamma, then two
    xor-shift-multiply mixing rounds per output."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * MIX_1) & MASK64
        z = ((z ^ (z >> 27)) * MIX_2) & MASK64
        return z ^ (z >> 31)

    def next_u32(self) -> int:
        """Low 32 bits of the next 64-bit output."""
        return self.next_u64() & 0xFFFFFFFF

    def next_below(self, bound: int) -> int:
        """Uniform-ish draw in [0, bound) for small bounds (selection use)."""
        return self.next_u64() % bound
