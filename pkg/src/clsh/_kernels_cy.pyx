# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bit kernels; semantics identical to ``_kernels_py``.

Keep the two modules in lockstep: the test suite asserts bit-exact equality
of their outputs, and serialized index bytes must not depend on the backend.
"""

import numpy as np

from libc.stdint cimport int64_t, uint64_t

cdef extern from *:
    """
    #if defined(__GNUC__) || defined(__clang__)
    #  define clsh_popcnt64(x) __builtin_popcountll(x)
    #else
    static inline int clsh_popcnt64(unsigned long long x) {
        x = x - ((x >> 1) & 0x5555555555555555ULL);
        x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
        x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0FULL;
        return (int)((x * 0x0101010101010101ULL) >> 56);
    }
    #endif
    """
    int clsh_popcnt64(uint64_t x) nogil

cdef uint64_t MIX_A = <uint64_t>0xBF58476D1CE4E5B9
cdef uint64_t MIX_B = <uint64_t>0x94D049BB133111EB
cdef uint64_t LANE0 = <uint64_t>0x9E3779B97F4A7C15
cdef uint64_t LANE1 = <uint64_t>0xC2B2AE3D27D4EB4F


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MIX_A
    z = (z ^ (z >> 27)) * MIX_B
    return z ^ (z >> 31)


def popcount_u64(a):
    """Per-element popcount of a uint64 array (any shape)."""
    flat = np.ascontiguousarray(a, dtype=np.uint64).ravel()
    out = np.empty(flat.shape[0], dtype=np.uint64)
    cdef uint64_t[::1] src = flat
    cdef uint64_t[::1] dst = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            dst[i] = <uint64_t>clsh_popcnt64(src[i])
    return out.reshape(np.shape(a))


def weight_words(words):
    """Total popcount of a 1-d word array."""
    cdef const uint64_t[::1] w = np.ascontiguousarray(words, dtype=np.uint64)
    cdef int64_t total = 0
    cdef Py_ssize_t i
    with nogil:
        for i in range(w.shape[0]):
            total += clsh_popcnt64(w[i])
    return int(total)


def weight_rows(mat):
    """Row-wise popcount of an (n, w) word matrix -> int64 (n,)."""
    cdef const uint64_t[:, ::1] m = np.ascontiguousarray(mat, dtype=np.uint64)
    out = np.empty(m.shape[0], dtype=np.int64)
    cdef int64_t[::1] dst = out
    cdef Py_ssize_t i, j
    cdef int64_t acc
    with nogil:
        for i in range(m.shape[0]):
            acc = 0
            for j in range(m.shape[1]):
                acc += clsh_popcnt64(m[i, j])
            dst[i] = acc
    return out


def distance_words(a, b):
    """Hamming distance between two word rows."""
    cdef const uint64_t[::1] x = np.ascontiguousarray(a, dtype=np.uint64)
    cdef const uint64_t[::1] y = np.ascontiguousarray(b, dtype=np.uint64)
    cdef int64_t total = 0
    cdef Py_ssize_t i
    with nogil:
        for i in range(x.shape[0]):
            total += clsh_popcnt64(x[i] ^ y[i])
    return int(total)


def distances_to(mat, vec):
    """Hamming distance from every row of mat to vec -> int64 (n,)."""
    cdef const uint64_t[:, ::1] m = np.ascontiguousarray(mat, dtype=np.uint64)
    cdef const uint64_t[::1] v = np.ascontiguousarray(vec, dtype=np.uint64)
    out = np.empty(m.shape[0], dtype=np.int64)
    cdef int64_t[::1] dst = out
    cdef Py_ssize_t i, j
    cdef int64_t acc
    with nogil:
        for i in range(m.shape[0]):
            acc = 0
            for j in range(m.shape[1]):
                acc += clsh_popcnt64(m[i, j] ^ v[j])
            dst[i] = acc
    return out


def collide_rows(zmat, mask):
    """Rows z of zmat with z & mask == 0 -> bool (n,)."""
    cdef const uint64_t[:, ::1] z = np.ascontiguousarray(zmat, dtype=np.uint64)
    cdef const uint64_t[::1] a = np.ascontiguousarray(mask, dtype=np.uint64)
    out = np.empty(z.shape[0], dtype=np.bool_)
    cdef unsigned char[::1] dst = out.view(np.uint8)
    cdef Py_ssize_t i, j
    cdef uint64_t acc
    with nogil:
        for i in range(z.shape[0]):
            acc = 0
            for j in range(z.shape[1]):
                acc |= z[i, j] & a[j]
            dst[i] = acc == 0
    return out


def count_collisions(zmat, masks):
    """Per-mask count of rows colliding with the query -> int64 (n_masks,)."""
    cdef const uint64_t[:, ::1] z = np.ascontiguousarray(zmat, dtype=np.uint64)
    cdef const uint64_t[:, ::1] ms = np.ascontiguousarray(masks, dtype=np.uint64)
    out = np.empty(ms.shape[0], dtype=np.int64)
    cdef int64_t[::1] dst = out
    cdef Py_ssize_t h, i, j
    cdef int64_t cnt
    cdef uint64_t acc
    with nogil:
        for h in range(ms.shape[0]):
            cnt = 0
            for i in range(z.shape[0]):
                acc = 0
                for j in range(z.shape[1]):
                    acc |= z[i, j] & ms[h, j]
                    if acc != 0:
                        break
                if acc == 0:
                    cnt += 1
            dst[h] = cnt
    return out


def digest_rows(mat, salt):
    """128-bit row digests as two uint64 lanes; see the pure twin."""
    return _digest_impl(mat, None, salt)


def masked_digest_rows(mat, mask, salt):
    """Digest of every row AND mask; the index build/probe hot path."""
    return _digest_impl(mat, mask, salt)


def _digest_impl(mat, mask, salt):
    cdef const uint64_t[:, ::1] m = np.ascontiguousarray(mat, dtype=np.uint64)
    cdef Py_ssize_t n = m.shape[0], w = m.shape[1]
    hi = np.empty(n, dtype=np.uint64)
    lo = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] dhi = hi
    cdef uint64_t[::1] dlo = lo
    cdef const uint64_t[::1] a
    cdef bint masked = mask is not None
    if masked:
        a = np.ascontiguousarray(mask, dtype=np.uint64)
    cdef uint64_t s = <uint64_t>(int(salt) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t h0 = _mix64(s ^ <uint64_t>LANE0)
    cdef uint64_t l0 = _mix64(s ^ <uint64_t>LANE1)
    cdef uint64_t h, l, word
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            h = h0
            l = l0
            for j in range(w):
                word = m[i, j]
                if masked:
                    word &= a[j]
                h = _mix64(h ^ word)
                l = _mix64(l ^ word)
            dhi[i] = h
            dlo[i] = l
    return hi, lo
