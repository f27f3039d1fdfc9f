"""Bit vectors, point sets, and the CLSH1 wire format."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clsh.bits import (
    BadMagicError,
    BitVector,
    DimensionMismatchError,
    InvalidHeaderError,
    PaddingBitsError,
    PointSet,
    TrailingDataError,
    TruncatedPayloadError,
    hamming_distance,
    hamming_weight,
    points_from_bytes,
    points_to_bytes,
    read_points,
    write_points,
)

bit_lists = st.lists(st.integers(0, 1), min_size=1, max_size=200)


class TestBitVector:
    def test_from_bits_roundtrip_small(self):
        v = BitVector.from_bits([1, 0, 1, 1, 0])
        assert v.dims == 5
        assert [v[i] for i in range(5)] == [1, 0, 1, 1, 0]
        assert v.weight() == 3
        assert v.positions() == [0, 2, 3]

    def test_zeros_ones(self):
        z = BitVector.zeros(70)
        o = BitVector.ones(70)
        assert z.weight() == 0 and o.weight() == 70
        assert hamming_distance(z, o) == 70
        assert z.invert() == o

    def test_from_positions(self):
        v = BitVector.from_positions([0, 2, 4, 6], 8)
        assert v.to_bytes() == b"\x55"
        with pytest.raises(ValueError):
            BitVector.from_positions([8], 8)

    def test_hex_roundtrip(self):
        v = BitVector.from_positions([0, 2, 4, 6], 8)
        assert BitVector.from_hex(v.to_hex(), 8) == v

    def test_int_roundtrip(self):
        v = BitVector.from_int(0b1011, 6)
        assert v.positions() == [0, 1, 3]
        assert v.to_int() == 0b1011

    def test_xor_and_distance(self):
        a = BitVector.from_bits([1, 1, 0, 0])
        b = BitVector.from_bits([1, 0, 1, 0])
        assert (a ^ b).positions() == [1, 2]
        assert hamming_distance(a, b) == 2
        assert hamming_weight(a) == 2
        assert (a & b).positions() == [0]
        assert (a | b).positions() == [0, 1, 2]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            BitVector.zeros(8) ^ BitVector.zeros(9)

    def test_flip(self):
        v = BitVector.zeros(10).flip([1, 3])
        assert v.positions() == [1, 3]
        assert v.flip([3]).positions() == [1]

    def test_hashable(self):
        a = BitVector.from_bits([1, 0, 1])
        b = BitVector.from_bits([1, 0, 1])
        assert a == b and hash(a) == hash(b)
        assert len({a, b}) == 1

    def test_padding_stays_clear(self, rng):
        v = BitVector.random(65, rng)
        assert int(v.words[-1]) >> 1 == 0
        w = v.invert()
        assert w.weight() == 65 - v.weight()

    @settings(max_examples=100, deadline=None)
    @given(bit_lists)
    def test_bits_roundtrip_property(self, bits):
        v = BitVector.from_bits(bits)
        assert [v[i] for i in range(len(bits))] == bits
        assert v.weight() == sum(bits)
        assert BitVector.from_bytes(v.to_bytes(), len(bits)) == v
        assert BitVector.from_hex(v.to_hex(), len(bits)) == v

    @settings(max_examples=100, deadline=None)
    @given(bit_lists, st.randoms(use_true_random=False))
    def test_triangle_inequality(self, bits, pyrand):
        d = len(bits)
        a = BitVector.from_bits(bits)
        b = BitVector.from_bits([pyrand.randint(0, 1) for _ in range(d)])
        c = BitVector.from_bits([pyrand.randint(0, 1) for _ in range(d)])
        assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)
        assert hamming_distance(a, b) == hamming_distance(b, a)
        assert hamming_distance(a, a) == 0


class TestPointSet:
    def test_from_vectors(self):
        vs = [BitVector.from_bits([1, 0, 1]), BitVector.from_bits([0, 1, 1])]
        ps = PointSet.from_vectors(vs)
        assert len(ps) == 2 and ps.dims == 3
        assert ps[0] == vs[0] and ps[1] == vs[1]
        assert ps.weights().tolist() == [2, 2]

    def test_empty(self):
        ps = PointSet.empty(16)
        assert len(ps) == 0
        assert ps.distances_from(BitVector.zeros(16)).shape == (0,)

    def test_distances_from(self, rng):
        ps = PointSet.random(20, 33, rng)
        y = BitVector.random(33, rng)
        want = [hamming_distance(ps[i], y) for i in range(20)]
        assert ps.distances_from(y).tolist() == want

    def test_mixed_dims_rejected(self):
        with pytest.raises(DimensionMismatchError):
            PointSet.from_vectors([BitVector.zeros(3), BitVector.zeros(4)])


class TestWireFormat:
    def test_exact_bytes_oracle(self):
        # one 8-bit point with bits 0,2,4,6: header then the single byte 0x55
        ps = PointSet.from_vectors([BitVector.from_positions([0, 2, 4, 6], 8)])
        data = points_to_bytes(ps)
        assert data == b"CLSH1\x00" + struct.pack("<HQQ", 1, 1, 8) + b"\x55"

    def test_row_padding_to_bytes(self):
        # 9 dims -> 2 bytes per row, padding bits zero
        ps = PointSet.from_vectors([BitVector.from_positions([0, 8], 9)])
        data = points_to_bytes(ps)
        assert data[-2:] == b"\x01\x01"

    def test_file_roundtrip(self, tmp_path, rng):
        ps = PointSet.random(37, 129, rng)
        path = tmp_path / "pts.clsh1"
        write_points(ps, path)
        back = read_points(path)
        assert back.dims == ps.dims and len(back) == len(ps)
        assert np.array_equal(back.matrix, ps.matrix)

    def test_empty_set_roundtrip(self):
        ps = PointSet.empty(12)
        assert len(points_from_bytes(points_to_bytes(ps))) == 0

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            points_from_bytes(b"NOPE!\x00" + bytes(18))

    def test_truncated_header(self):
        with pytest.raises(TruncatedPayloadError):
            points_from_bytes(b"CLSH1\x00\x01")

    def test_truncated_payload(self):
        good = points_to_bytes(PointSet.from_vectors([BitVector.ones(64)]))
        with pytest.raises(TruncatedPayloadError):
            points_from_bytes(good[:-1])

    def test_trailing_data(self):
        good = points_to_bytes(PointSet.from_vectors([BitVector.ones(8)]))
        with pytest.raises(TrailingDataError):
            points_from_bytes(good + b"\x00")

    def test_bad_version(self):
        bad = b"CLSH1\x00" + struct.pack("<HQQ", 9, 0, 8)
        with pytest.raises(InvalidHeaderError):
            points_from_bytes(bad)

    def test_zero_dims_rejected(self):
        bad = b"CLSH1\x00" + struct.pack("<HQQ", 1, 0, 0)
        with pytest.raises(InvalidHeaderError):
            points_from_bytes(bad)

    def test_padding_bits_rejected(self):
        # 7 dims, byte with bit 7 set: outside the declared dimension
        bad = b"CLSH1\x00" + struct.pack("<HQQ", 1, 1, 7) + b"\x80"
        with pytest.raises(PaddingBitsError):
            points_from_bytes(bad)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 20), st.integers(1, 90), st.integers(0, 2**32 - 1))
    def test_roundtrip_property(self, n, d, seed):
        ps = PointSet.random(n, d, np.random.default_rng(seed))
        back = points_from_bytes(points_to_bytes(ps))
        assert np.array_equal(back.matrix, ps.matrix) and back.dims == d
