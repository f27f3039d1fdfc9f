"""Backend equality and bit-kernel oracles.

Every kernel is checked against int.bit_count / plain-Python arithmetic,
and the compiled backend must agree with the NumPy backend bit for bit.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clsh import kernels
from clsh import _kernels_py

BACKENDS = kernels.available_backends()


def random_words(rng, n, w):
    return rng.integers(0, 1 << 64, size=(n, w), dtype=np.uint64)


def test_popcount_oracle(rng):
    vals = rng.integers(0, 1 << 64, size=257, dtype=np.uint64)
    got = _kernels_py.popcount_u64(vals)
    want = np.array([int(v).bit_count() for v in vals], dtype=np.uint64)
    assert np.array_equal(got, want)


def test_popcount_edge_values():
    vals = np.array([0, 1, (1 << 64) - 1, 1 << 63, 0x5555555555555555], dtype=np.uint64)
    got = _kernels_py.popcount_u64(vals)
    assert got.tolist() == [0, 1, 64, 1, 32]


def test_popcount_any_shape(rng):
    a = rng.integers(0, 1 << 64, size=(3, 4, 5), dtype=np.uint64)
    got = kernels.popcount_u64(a)
    assert got.shape == (3, 4, 5)
    flat = [int(v).bit_count() for v in a.ravel()]
    assert got.ravel().astype(int).tolist() == flat


def test_weight_and_distance_oracle(rng):
    mat = random_words(rng, 40, 3)
    weights = _kernels_py.weight_rows(mat)
    for i in range(40):
        bits = sum(int(w).bit_count() for w in mat[i])
        assert weights[i] == bits
    vec = random_words(rng, 1, 3)[0]
    dists = _kernels_py.distances_to(mat, vec)
    for i in range(40):
        want = sum(int(a ^ b).bit_count() for a, b in zip(mat[i], vec))
        assert dists[i] == want
        assert _kernels_py.distance_words(mat[i], vec) == want


def test_collide_rows_oracle(rng):
    zmat = random_words(rng, 64, 2)
    zmat[5] = 0
    mask = random_words(rng, 1, 2)[0]
    got = _kernels_py.collide_rows(zmat, mask)
    for i in range(64):
        want = all(int(zmat[i, j]) & int(mask[j]) == 0 for j in range(2))
        assert bool(got[i]) == want
    assert bool(got[5])


def test_count_collisions_oracle(rng):
    zmat = random_words(rng, 50, 2)
    masks = random_words(rng, 20, 2)
    masks[3] = 0  # the empty mask collides with everything
    got = _kernels_py.count_collisions(zmat, masks)
    assert got[3] == 50
    for h in range(20):
        want = int(_kernels_py.collide_rows(zmat, masks[h]).sum())
        assert got[h] == want


def test_digest_depends_on_salt_and_row(rng):
    mat = random_words(rng, 8, 2)
    h1, l1 = _kernels_py.digest_rows(mat, 1)
    h2, l2 = _kernels_py.digest_rows(mat, 2)
    assert not np.array_equal(h1, h2)
    assert not np.array_equal(l1, l2)
    # same input replays identically
    h1b, l1b = _kernels_py.digest_rows(mat, 1)
    assert np.array_equal(h1, h1b) and np.array_equal(l1, l1b)


def test_masked_digest_equals_digest_of_masked(rng):
    mat = random_words(rng, 16, 3)
    mask = random_words(rng, 1, 3)[0]
    ha, la = _kernels_py.masked_digest_rows(mat, mask, 9)
    hb, lb = _kernels_py.digest_rows(mat & mask[np.newaxis, :], 9)
    assert np.array_equal(ha, hb) and np.array_equal(la, lb)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled backend absent")
class TestBackendParity:
    """The compiled twins must be bit-exact with the NumPy versions."""

    def test_all_kernels_agree(self, rng):
        cy = BACKENDS["cython"]
        mat = random_words(rng, 33, 3)
        vec = random_words(rng, 1, 3)[0]
        masks = random_words(rng, 9, 3)
        assert np.array_equal(
            _kernels_py.popcount_u64(mat), cy.popcount_u64(mat)
        )
        assert _kernels_py.weight_words(vec) == cy.weight_words(vec)
        assert np.array_equal(_kernels_py.weight_rows(mat), cy.weight_rows(mat))
        assert _kernels_py.distance_words(mat[0], vec) == cy.distance_words(mat[0], vec)
        assert np.array_equal(
            _kernels_py.distances_to(mat, vec), cy.distances_to(mat, vec)
        )
        for h in range(9):
            assert np.array_equal(
                _kernels_py.collide_rows(mat, masks[h]), cy.collide_rows(mat, masks[h])
            )
        assert np.array_equal(
            _kernels_py.count_collisions(mat, masks), cy.count_collisions(mat, masks)
        )
        for salt in (0, 7, (1 << 64) - 1):
            ha, la = _kernels_py.digest_rows(mat, salt)
            hb, lb = cy.digest_rows(mat, salt)
            assert np.array_equal(ha, hb) and np.array_equal(la, lb)
            ha, la = _kernels_py.masked_digest_rows(mat, masks[0], salt)
            hb, lb = cy.masked_digest_rows(mat, masks[0], salt)
            assert np.array_equal(ha, hb) and np.array_equal(la, lb)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, (1 << 64) - 1), min_size=1, max_size=12), st.integers(0, (1 << 64) - 1))
    def test_digest_property(self, words, salt):
        cy = BACKENDS["cython"]
        mat = np.array([words], dtype=np.uint64)
        py_hi, py_lo = _kernels_py.digest_rows(mat, salt)
        cy_hi, cy_lo = cy.digest_rows(mat, salt)
        assert np.array_equal(py_hi, cy_hi) and np.array_equal(py_lo, cy_lo)


def test_use_backend_roundtrip():
    current = kernels.BACKEND
    kernels.use_backend("python")
    assert kernels.BACKEND == "python"
    assert kernels.popcount_u64 is _kernels_py.popcount_u64
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
    kernels.use_backend(current)
    assert kernels.BACKEND == current
