"""Platform-independent hashing and PRNG primitives.

These are pinned bit-for-bit so that prompt embeddings, crop offsets and
generated datasets reproduce identically across machines and runs.
"""

_MASK64 = (1 << 64) - 1

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def next_unit(self) -> float:
        """Uniform in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_symmetric(self) -> float:
        """Uniform in [-1, 1)."""
        return 2.0 * self.next_unit() - 1.0

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by modulo reduction (n small, bias negligible)."""
        if n <= 0:
            raise ValueError(f"next_below requires n >= 1, got {n}")
        return self.next_u64() % n
