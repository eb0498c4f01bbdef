"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(seed, stream, step, block, tag)``, so a
trajectory's noise does not depend on how particles are scheduled across
threads or on how many other particles are simulated alongside it.

Counter layout (four 32-bit words)::

    c0 = step & 0xffffffff
    c1 = ((step >> 32) & 0xffff) | (block << 16) | (tag << 24)
    c2 = stream & 0xffffffff
    c3 = stream >> 32

and the 64-bit seed is the key. The compiled kernels use the same layout, so
both backends see identical uniforms.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

TAG_NOISE = 0
TAG_RESAMPLE = 1
TAG_AUX = 2

_TWO_M53 = 2.0**-53


def philox4x32(counter, key):
    """Apply ten Philox rounds.

    ``counter`` has shape ``(..., 4)`` and ``key`` shape ``(..., 2)``, both of
    unsigned integers below 2**32. Returns an ``(..., 4)`` uint64 array of
    32-bit words.
    """
    c = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0 = np.broadcast_to(k[..., 0], c0.shape).copy()
    k1 = np.broadcast_to(k[..., 1], c0.shape).copy()
    for r in range(10):
        if r:
            k0 = (k0 + np.uint64(_W0)) & _MASK32
            k1 = (k1 + np.uint64(_W1)) & _MASK32
        prod0 = _M0 * c0
        prod1 = _M1 * c2
        n0 = (prod1 >> _SHIFT32) ^ c1 ^ k0
        n2 = (prod0 >> _SHIFT32) ^ c3 ^ k1
        c1 = prod1 & _MASK32
        c3 = prod0 & _MASK32
        c0, c2 = n0, n2
    return np.stack([c0, c1, c2, c3], axis=-1)


def _counters(step, stream, block, tag):
    step = np.asarray(step, dtype=np.uint64)
    stream = np.asarray(stream, dtype=np.uint64)
    step, stream = np.broadcast_arrays(step, stream)
    c = np.empty(step.shape + (4,), dtype=np.uint64)
    c[..., 0] = step & _MASK32
    c[..., 1] = (
        ((step >> _SHIFT32) & np.uint64(0xFFFF))
        | (np.uint64(block) << np.uint64(16))
        | (np.uint64(tag) << np.uint64(24))
    )
    c[..., 2] = stream & _MASK32
    c[..., 3] = stream >> _SHIFT32
    return c


def _key(seed):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint64)


def raw_words(seed, stream, step, block=0, tag=TAG_NOISE):
    """Four 32-bit words per (stream, step) pair, broadcast over inputs."""
    return philox4x32(_counters(step, stream, block, tag), _key(seed))


def _pair_to_u53(words):
    a = (words[..., 0] << _SHIFT32) | words[..., 1]
    b = (words[..., 2] << _SHIFT32) | words[..., 3]
    return a >> np.uint64(11), b >> np.uint64(11)


def uniforms(seed, stream, step, tag=TAG_RESAMPLE):
    """One uniform in [0, 1) per (stream, step) pair."""
    a, _ = _pair_to_u53(raw_words(seed, stream, step, 0, tag))
    return a.astype(np.float64) * _TWO_M53


def normals(seed, stream, step, count, tag=TAG_NOISE):
    """``count`` standard normals per (stream, step) pair via Box-Muller.

    Output shape is ``broadcast(stream, step).shape + (count,)``.
    """
    nblocks = (count + 1) // 2
    shape = np.broadcast(np.asarray(stream), np.asarray(step)).shape
    out = np.empty(shape + (2 * nblocks,), dtype=np.float64)
    for b in range(nblocks):
        a, c = _pair_to_u53(raw_words(seed, stream, step, b, tag))
        u1 = (a.astype(np.float64) + 1.0) * _TWO_M53
        u2 = c.astype(np.float64) * _TWO_M53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out[..., 2 * b] = r * np.cos(theta)
        out[..., 2 * b + 1] = r * np.sin(theta)
    return out[..., :count]


class StreamRNG:
    """Convenience wrapper binding a seed and a stream for auxiliary draws.

    Each call advances an internal counter, so a sequence of calls is
    reproducible from ``(seed, stream)`` alone.
    """

    def __init__(self, seed: int, stream: int = 0, tag: int = TAG_AUX):
        self.seed = int(seed)
        self.stream = int(stream)
        self.tag = tag
        self._counter = 0

    def _next_steps(self, n):
        steps = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        return steps

    def random(self, n: int) -> np.ndarray:
        return uniforms(self.seed, self.stream, self._next_steps(n), tag=self.tag)

    def standard_normal(self, n: int) -> np.ndarray:
        return normals(self.seed, self.stream, self._next_steps(n), 1, tag=self.tag)[:, 0]

    def integers(self, high: int, n: int) -> np.ndarray:
        return np.minimum((self.random(n) * high).astype(np.int64), high - 1)
