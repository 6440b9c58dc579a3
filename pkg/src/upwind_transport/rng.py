"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(seed, particle id, step, purpose)``, so a
particle's path does not depend on how many other particles are simulated or
on how the work is split across threads.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_M0, _M1 = 0xD2511F53, 0xCD9E8D57
_W0, _W1 = 0x9E3779B9, 0xBB67AE85
_MASK = 0xFFFFFFFF
ROUNDS = 10

PURPOSE_INIT = 0
PURPOSE_JUMP = 1


def split_seed(seed: int) -> tuple[int, int]:
    """Two 32-bit key words of a nonnegative 64-bit seed."""
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed & _MASK, seed >> 32


def philox4x32(counter, key, rounds: int = ROUNDS) -> np.ndarray:
    """Vectorized Philox4x32 block function.

    ``counter`` is a sequence of four broadcastable arrays of 32-bit words and
    ``key`` two such words.  Returns an array of shape ``(..., 4)`` of uint32.
    """
    M0, M1 = np.uint64(_M0), np.uint64(_M1)
    mask, s32 = np.uint64(_MASK), np.uint64(32)
    c0, c1, c2, c3 = np.broadcast_arrays(*[np.asarray(c, dtype=np.uint64) for c in counter])
    k0 = np.asarray(key[0], dtype=np.uint64)
    k1 = np.asarray(key[1], dtype=np.uint64)
    for _ in range(rounds):
        p0 = M0 * c0
        p1 = M1 * c2
        c0, c1, c2, c3 = ((p1 >> s32) ^ c1 ^ k0) & mask, p1 & mask, ((p0 >> s32) ^ c3 ^ k1) & mask, p0 & mask
        k0 = (k0 + np.uint64(_W0)) & mask
        k1 = (k1 + np.uint64(_W1)) & mask
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def to_unit(words) -> np.ndarray:
    """Map 32-bit words to the open interval ``(0, 1)``."""
    return (np.asarray(words, dtype=np.float64) + 0.5) * 2.0 ** -32


def stream_uniforms(seed: int, ids, step: int, purpose: int) -> np.ndarray:
    """Four uniforms per particle id, shape ``(len(ids), 4)``."""
    ids = np.asarray(ids, dtype=np.uint64)
    k0, k1 = split_seed(seed)
    block = philox4x32((ids & np.uint64(_MASK), ids >> np.uint64(32), step, purpose), (k0, k1))
    return to_unit(block)


@nb.njit(cache=True, inline="always")
def philox_block(c0, c1, c2, c3, k0, k1):
    """Scalar Philox4x32-10 on uint64-held 32-bit words (compiled)."""
    mask = np.uint64(_MASK)
    for _ in range(ROUNDS):
        p0 = np.uint64(_M0) * c0
        p1 = np.uint64(_M1) * c2
        n0 = ((p1 >> np.uint64(32)) ^ c1 ^ k0) & mask
        n1 = p1 & mask
        n2 = ((p0 >> np.uint64(32)) ^ c3 ^ k1) & mask
        n3 = p0 & mask
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + np.uint64(_W0)) & mask
        k1 = (k1 + np.uint64(_W1)) & mask
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def unit(word):
    return (np.float64(word) + 0.5) * 2.3283064365386963e-10
