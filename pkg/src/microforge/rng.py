"""Deterministic random streams built on a philox2x64 counter-based generator.

Every stochastic component of the pipeline draws from a `RandomStream`.  The
stream state is exactly 16 bytes (64-bit key, 64-bit block counter), which
makes it trivial to serialize into checkpoints and reproduces bit-identically
on every platform: all arithmetic is fixed-width uint64, no libm calls other
than sqrt/log/cos/sin on IEEE doubles.

Streams are splittable: `split(label)` derives an independent child stream
keyed by the parent key and a label, so pipeline stages can re-run in
isolation without replaying the draws of earlier stages.
"""

from __future__ import annotations

import math
import struct

import numpy as np

_U64 = np.uint64
_MASK32 = _U64(0xFFFFFFFF)
_SHIFT32 = _U64(32)
# philox2x64 round constants
_MULT = _U64(0xD2B74407B1CE6E93)
_BUMP = _U64(0x9E3779B97F4A7C15)
_ROUNDS = 10
# domain separator so split() keys do not alias the raw output space
_SPLIT_TAG = _U64(0xA5A5F0F0C3C35A5A)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_INV_2_53 = float(2.0 ** -53)


def _fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _mulhi64(a: np.ndarray, m: np.uint64) -> np.ndarray:
    """High 64 bits of the 128-bit product a*m (element-wise)."""
    a_lo = a & _MASK32
    a_hi = a >> _SHIFT32
    m_lo = m & _MASK32
    m_hi = m >> _SHIFT32
    t = a_lo * m_lo
    carry = t >> _SHIFT32
    t1 = a_hi * m_lo + carry
    w1 = t1 & _MASK32
    w2 = t1 >> _SHIFT32
    t2 = a_lo * m_hi + w1
    return a_hi * m_hi + w2 + (t2 >> _SHIFT32)


def _philox_blocks(key: np.uint64, counters: np.ndarray):
    """Run the philox2x64 permutation on an array of block counters.

    Returns two uint64 arrays (the two output words per counter).
    """
    c0 = counters.astype(np.uint64, copy=True)
    c1 = np.zeros_like(c0)
    k = np.uint64(key)
    with np.errstate(over="ignore"):
        for _ in range(_ROUNDS):
            hi = _mulhi64(c0, _MULT)
            lo = c0 * _MULT
            c0 = hi ^ k ^ c1
            c1 = lo
            k = k + _BUMP
    return c0, c1


class RandomStream:
    """Splittable counter-based random stream with 16-byte state."""

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.key = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter) & 0xFFFFFFFFFFFFFFFF

    # -- state ---------------------------------------------------------

    @property
    def state(self) -> tuple[int, int]:
        return (self.key, self.counter)

    @classmethod
    def from_state(cls, state) -> "RandomStream":
        key, counter = state
        return cls(key, counter)

    def state_bytes(self) -> bytes:
        return struct.pack("<QQ", self.key, self.counter)

    @classmethod
    def from_state_bytes(cls, raw: bytes) -> "RandomStream":
        key, counter = struct.unpack("<QQ", raw)
        return cls(key, counter)

    def split(self, label) -> "RandomStream":
        """Derive an independent child stream from a string or int label."""
        if isinstance(label, str):
            label = _fnv1a64(label)
        ctr = np.array([int(label) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        hi, lo = _philox_blocks(np.uint64(self.key) ^ _SPLIT_TAG, ctr)
        return RandomStream(int(hi[0]) ^ int(lo[0]) >> 1)

    # -- raw draws -----------------------------------------------------

    def raw64(self, n: int) -> np.ndarray:
        """n uint64 words; consumes ceil(n/2) counter blocks."""
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        blocks = (n + 1) // 2
        counters = np.arange(self.counter, self.counter + blocks, dtype=np.uint64)
        hi, lo = _philox_blocks(np.uint64(self.key), counters)
        out = np.empty(2 * blocks, dtype=np.uint64)
        out[0::2] = hi
        out[1::2] = lo
        self.counter = (self.counter + blocks) & 0xFFFFFFFFFFFFFFFF
        return out[:n]

    # -- typed draws ----------------------------------------------------

    def uniform(self, shape=()) -> np.ndarray:
        """float64 in [0, 1), one per element of `shape`."""
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        bits = self.raw64(n) >> np.uint64(11)
        vals = bits.astype(np.float64) * _INV_2_53
        return vals.reshape(shape) if shape else vals[0]

    def normal(self, shape=(), dtype=np.float32) -> np.ndarray:
        """Standard normals via Box-Muller on stream uniforms."""
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = self.raw64(pairs) >> np.uint64(11)
        u2 = self.raw64(pairs) >> np.uint64(11)
        # 1-u in (0,1] keeps log() finite
        r = np.sqrt(-2.0 * np.log1p(-(u1.astype(np.float64) * _INV_2_53)))
        theta = (2.0 * math.pi) * (u2.astype(np.float64) * _INV_2_53)
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        out = out[:n].astype(dtype)
        return out.reshape(shape) if shape else out[0]

    def integers(self, upper: int, shape=()) -> np.ndarray:
        """Uniform integers in [0, upper) via the multiply-shift method."""
        if upper <= 0:
            raise ValueError("upper bound must be positive")
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        words = self.raw64(n)
        idx = _mulhi64(words, _U64(upper)).astype(np.int64)
        return idx.reshape(shape) if shape else int(idx[0])

    def shuffle_index(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (Fisher-Yates)."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        draws = self.integers(1 << 62, (n - 1,))
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def __repr__(self):
        return f"RandomStream(key=0x{self.key:016x}, counter={self.counter})"


def _as_shape(shape):
    if isinstance(shape, int):
        return (shape,)
    return tuple(int(s) for s in shape)
