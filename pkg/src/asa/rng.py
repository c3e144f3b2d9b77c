"""Deterministic 64-bit randomness: SplitMix64 streams and seed derivation.

Every random draw in the system comes from a SplitMix64 stream so that runs
are bit-reproducible across processes and languages. Per-run seeds derive
from a batch seed, per-agent streams derive from the run seed and the
agent id (FNV-1a), and each stream advances only by its owner's draws.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """SplitMix64 finalizer: avalanche a 64-bit value."""
    z &= _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash over the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def derive_seed(batch_seed: int, index: int) -> int:
    """Per-run seed for position ``index`` within a batch.

    mix64(batch_seed XOR (index+1) * golden-gamma), all mod 2**64. Distinct
    indices give decorrelated seeds; the same (batch_seed, index) gives the
    same seed in any process.
    """
    return mix64((batch_seed & _MASK64) ^ (((index + 1) * _GOLDEN) & _MASK64))


def agent_stream_seed(run_seed: int, agent_id: str) -> int:
    """Seed for one agent's private stream within a run."""
    return mix64((run_seed & _MASK64) ^ fnv1a64(agent_id))


class SplitMix64:
    """Stateful SplitMix64 stream: state += gamma, output = mix64(state)."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is negligible for desk-scale n."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def next_bool(self, p: float) -> bool:
        """One Bernoulli(p) draw."""
        return self.next_float() < p

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]
