"""Pure NumPy bit kernels.

Every function here has a twin in ``_kernels_cy`` (compiled) with identical
semantics; ``clsh.kernels`` picks one implementation at import time.  Vectors
are rows of little-endian uint64 words, padding bits zero.

The popcount uses the standard SWAR reduction: fold pairs of bits, then
nibbles, then multiply to sum the bytes into the top byte.
"""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0x5555555555555555)  # 01010101...
_M2 = np.uint64(0x3333333333333333)  # 00110011...
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)  # 00001111...
_H01 = np.uint64(0x0101010101010101)  # byte-sum multiplier

_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_LANE0 = 0x9E3779B97F4A7C15
_LANE1 = 0xC2B2AE3D27D4EB4F
_MASK64 = (1 << 64) - 1


def popcount_u64(a: np.ndarray) -> np.ndarray:
    """Per-element popcount of a uint64 array (any shape)."""
    a = a - ((a >> np.uint64(1)) & _M1)
    a = (a & _M2) + ((a >> np.uint64(2)) & _M2)
    a = (a + (a >> np.uint64(4))) & _M4
    return (a * _H01) >> np.uint64(56)


def weight_words(words: np.ndarray) -> int:
    """Total popcount of a 1-d word array."""
    return int(popcount_u64(words).sum())


def weight_rows(mat: np.ndarray) -> np.ndarray:
    """Row-wise popcount of an (n, w) word matrix -> int64 (n,)."""
    return popcount_u64(mat).sum(axis=1).astype(np.int64)


def distance_words(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two word rows."""
    return int(popcount_u64(a ^ b).sum())


def distances_to(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Hamming distance from every row of mat to vec -> int64 (n,)."""
    return popcount_u64(mat ^ vec[np.newaxis, :]).sum(axis=1).astype(np.int64)


def collide_rows(zmat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Rows z of zmat with z & mask == 0 -> bool (n,).

    With zmat = points XOR query this is exactly "the masked point equals
    the masked query", i.e. a bucket collision under that mask.
    """
    hit = (zmat[:, 0] & mask[0]) != 0
    for j in range(1, zmat.shape[1]):
        hit |= (zmat[:, j] & mask[j]) != 0
    return ~hit


def count_collisions(zmat: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-mask count of rows colliding with the query -> int64 (n_masks,).

    zmat is points XOR query, masks an (n_masks, w) matrix.
    """
    out = np.empty(masks.shape[0], dtype=np.int64)
    for h in range(masks.shape[0]):
        out[h] = np.count_nonzero(collide_rows(zmat, masks[h]))
    return out


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def digest_rows(mat: np.ndarray, salt: int) -> tuple[np.ndarray, np.ndarray]:
    """128-bit row digests as two uint64 lanes, deterministic across backends.

    Rows are hashed word by word with a splitmix-style chain; the two lanes
    start from different salted seeds.  The same row bytes and salt always
    give the same digest, on any platform.
    """
    n, w = mat.shape
    hi = np.full(n, _mix64_int(salt ^ _LANE0), dtype=np.uint64)
    lo = np.full(n, _mix64_int(salt ^ _LANE1), dtype=np.uint64)
    for j in range(w):
        col = mat[:, j]
        hi = _mix64(hi ^ col)
        lo = _mix64(lo ^ col)
    return hi, lo


def masked_digest_rows(
    mat: np.ndarray, mask: np.ndarray, salt: int
) -> tuple[np.ndarray, np.ndarray]:
    """Digest of every row AND mask; the index build/probe hot path."""
    return digest_rows(mat & mask[np.newaxis, :], salt)
