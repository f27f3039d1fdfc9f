"""Packed bit vectors, point sets, and the CLSH1 dataset file format.

Bit layout
----------
Bit j of a vector lives in word j // 64 at bit position j % 64 (words are
uint64, least significant bit first).  On disk the same rule applies per
byte: bit j lives in byte j // 8 at bit j % 8, and words are the
little-endian composition of their 8 bytes, so the two layouts agree.
Vectors are kept canonical: all padding bits beyond the dimension are zero.

CLSH1 format: 6-byte magic "CLSH1\\0", u16 version (= 1), u64 row count n,
u64 dimension d, all little-endian, followed by n rows of ceil(d / 8) bytes.
"""

from __future__ import annotations

import struct
import sys
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from . import kernels

MAGIC_POINTS = b"CLSH1\x00"
_HEADER = struct.Struct("<6sHQQ")
FORMAT_VERSION = 1

# Hard sanity cap on declared row counts; anything above this cannot be a
# real dataset and is treated as a corrupt header.
_MAX_DECLARED_ROWS = 1 << 48


class ClshFormatError(ValueError):
    """Base class for file-format violations."""


class BadMagicError(ClshFormatError):
    pass


class InvalidHeaderError(ClshFormatError):
    """Zero dimension, unsupported version, or similar header nonsense."""


class DeclaredSizeError(ClshFormatError):
    """Declared row count is absurdly large or overflows the payload math."""


class TruncatedPayloadError(ClshFormatError):
    pass


class TrailingDataError(ClshFormatError):
    pass


class PaddingBitsError(ClshFormatError):
    """Payload sets bits beyond the declared dimension."""


class DimensionMismatchError(ValueError):
    def __init__(self, left: int, right: int, what: str = "operands"):
        super().__init__(f"dimension mismatch: {what} have {left} and {right} bits")
        self.left = left
        self.right = right


def words_for(dims: int) -> int:
    return (dims + 63) // 64


def row_bytes_for(dims: int) -> int:
    return (dims + 7) // 8


def _tail_mask(dims: int) -> int:
    used = dims % 64
    return (1 << used) - 1 if used else (1 << 64) - 1


def _check_dims(dims: int) -> None:
    if not isinstance(dims, (int, np.integer)) or dims < 1:
        raise ValueError(f"dimension must be a positive integer, got {dims!r}")


def _words_to_le_bytes(mat: np.ndarray) -> np.ndarray:
    """View an (n, w) uint64 matrix as (n, 8w) little-endian bytes."""
    arr = np.ascontiguousarray(mat)
    if sys.byteorder == "big":  # pragma: no cover - little-endian hosts only
        arr = arr.byteswap()
    return arr.view(np.uint8).reshape(mat.shape[0], mat.shape[1] * 8)


def _le_bytes_to_words(raw: np.ndarray, n: int, dims: int) -> np.ndarray:
    """Pack (n, row_bytes) payload bytes into a canonical (n, w) word matrix."""
    w = words_for(dims)
    padded = np.zeros((n, w * 8), dtype=np.uint8)
    padded[:, : raw.shape[1]] = raw
    mat = padded.view(np.uint64)
    if sys.byteorder == "big":  # pragma: no cover
        mat = mat.byteswap()
    return np.ascontiguousarray(mat)


class BitVector:
    """An immutable vector in Hamming space, packed into uint64 words."""

    __slots__ = ("dims", "_words")

    def __init__(self, words: np.ndarray, dims: int, _validate: bool = True):
        _check_dims(dims)
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 1 or words.shape[0] != words_for(dims):
            raise ValueError(
                f"expected {words_for(dims)} words for {dims} dims, got shape {words.shape}"
            )
        if _validate and int(words[-1]) & ~_tail_mask(dims) & ((1 << 64) - 1):
            raise PaddingBitsError(f"bits set beyond dimension {dims}")
        words.flags.writeable = False
        object.__setattr__(self, "dims", int(dims))
        object.__setattr__(self, "_words", words)

    def __setattr__(self, name, value):
        raise AttributeError("BitVector is immutable")

    # -- constructors ----------------------------------------------------

    @classmethod
    def zeros(cls, dims: int) -> "BitVector":
        _check_dims(dims)
        return cls(np.zeros(words_for(dims), dtype=np.uint64), dims, _validate=False)

    @classmethod
    def ones(cls, dims: int) -> "BitVector":
        _check_dims(dims)
        words = np.full(words_for(dims), (1 << 64) - 1, dtype=np.uint64)
        words[-1] = np.uint64(_tail_mask(dims))
        return cls(words, dims, _validate=False)

    @classmethod
    def from_bits(cls, bits: Iterable[int], dims: int | None = None) -> "BitVector":
        arr = np.fromiter((1 if b else 0 for b in bits), dtype=np.uint8)
        if dims is None:
            dims = arr.shape[0]
        if arr.shape[0] != dims:
            raise DimensionMismatchError(arr.shape[0], dims, "bit list and dims")
        raw = np.packbits(arr, bitorder="little")
        return cls(_le_bytes_to_words(raw[np.newaxis, :], 1, dims)[0], dims)

    @classmethod
    def from_positions(cls, positions: Iterable[int], dims: int) -> "BitVector":
        _check_dims(dims)
        value = 0
        for pos in positions:
            if not 0 <= pos < dims:
                raise ValueError(f"position {pos} outside [0, {dims})")
            value |= 1 << pos
        return cls.from_int(value, dims)

    @classmethod
    def from_int(cls, value: int, dims: int) -> "BitVector":
        _check_dims(dims)
        if value < 0 or value >> dims:
            raise ValueError(f"integer does not fit in {dims} bits")
        raw = np.frombuffer(
            value.to_bytes(row_bytes_for(dims), "little"), dtype=np.uint8
        )
        return cls(_le_bytes_to_words(raw[np.newaxis, :], 1, dims)[0], dims, _validate=False)

    @classmethod
    def from_bytes(cls, data: bytes, dims: int) -> "BitVector":
        _check_dims(dims)
        if len(data) != row_bytes_for(dims):
            raise ValueError(
                f"expected {row_bytes_for(dims)} bytes for {dims} dims, got {len(data)}"
            )
        raw = np.frombuffer(data, dtype=np.uint8)
        return cls(_le_bytes_to_words(raw[np.newaxis, :], 1, dims)[0], dims)

    @classmethod
    def from_hex(cls, text: str, dims: int) -> "BitVector":
        text = text.removeprefix("0x").removeprefix("0X")
        return cls.from_bytes(bytes.fromhex(text), dims)

    @classmethod
    def random(cls, dims: int, rng: np.random.Generator) -> "BitVector":
        _check_dims(dims)
        words = rng.integers(0, 1 << 64, size=words_for(dims), dtype=np.uint64)
        words[-1] &= np.uint64(_tail_mask(dims))
        return cls(words, dims, _validate=False)

    # -- accessors -------------------------------------------------------

    @property
    def words(self) -> np.ndarray:
        return self._words

    def to_bytes(self) -> bytes:
        return _words_to_le_bytes(self._words[np.newaxis, :])[0, : row_bytes_for(self.dims)].tobytes()

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    def to_int(self) -> int:
        return int.from_bytes(self.to_bytes(), "little")

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.dims:
            raise IndexError(j)
        return (int(self._words[j // 64]) >> (j % 64)) & 1

    def positions(self) -> list[int]:
        """Indices of set bits, ascending."""
        raw = np.frombuffer(self.to_bytes(), dtype=np.uint8)
        return np.flatnonzero(np.unpackbits(raw, bitorder="little")[: self.dims]).tolist()

    def weight(self) -> int:
        return kernels.weight_words(self._words)

    # -- operators (dims must match; results stay canonical) --------------

    def _binary(self, other: "BitVector", op) -> "BitVector":
        if not isinstance(other, BitVector):
            return NotImplemented
        if self.dims != other.dims:
            raise DimensionMismatchError(self.dims, other.dims)
        return BitVector(op(self._words, other._words), self.dims, _validate=False)

    def __xor__(self, other):
        return self._binary(other, np.bitwise_xor)

    def __and__(self, other):
        return self._binary(other, np.bitwise_and)

    def __or__(self, other):
        return self._binary(other, np.bitwise_or)

    def invert(self) -> "BitVector":
        """Complement within the dimension (padding bits stay zero)."""
        words = np.bitwise_not(self._words)
        words[-1] &= np.uint64(_tail_mask(self.dims))
        return BitVector(words, self.dims, _validate=False)

    def flip(self, positions: Iterable[int]) -> "BitVector":
        return self ^ BitVector.from_positions(positions, self.dims)

    def __eq__(self, other):
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self._words, other._words))

    def __hash__(self):
        return hash((self.dims, self._words.tobytes()))

    def __len__(self):
        return self.dims

    def __repr__(self):
        if self.dims <= 64:
            bits = "".join(str(self[j]) for j in range(self.dims))
            return f"BitVector({bits!r})"
        return f"BitVector(dims={self.dims}, hex={self.to_hex()})"


def hamming_weight(x: BitVector) -> int:
    """Number of set bits."""
    return x.weight()


def hamming_distance(x: BitVector, y: BitVector) -> int:
    """Number of positions where x and y differ."""
    if x.dims != y.dims:
        raise DimensionMismatchError(x.dims, y.dims)
    return kernels.distance_words(x.words, y.words)


class PointSet:
    """An immutable ordered collection of equal-dimension vectors.

    Point ids are the row positions; every operation that reorders or
    serializes the set preserves them.
    """

    __slots__ = ("dims", "_matrix")

    def __init__(self, matrix: np.ndarray, dims: int, _validate: bool = True):
        _check_dims(dims)
        matrix = np.ascontiguousarray(matrix, dtype=np.uint64)
        if matrix.ndim != 2 or matrix.shape[1] != words_for(dims):
            raise ValueError(
                f"expected (n, {words_for(dims)}) matrix for {dims} dims, got {matrix.shape}"
            )
        if _validate and matrix.shape[0]:
            tail = ~np.uint64(_tail_mask(dims))
            if np.any(matrix[:, -1] & tail):
                raise PaddingBitsError(f"bits set beyond dimension {dims}")
        matrix.flags.writeable = False
        object.__setattr__(self, "dims", int(dims))
        object.__setattr__(self, "_matrix", matrix)

    def __setattr__(self, name, value):
        raise AttributeError("PointSet is immutable")

    @classmethod
    def empty(cls, dims: int) -> "PointSet":
        return cls(np.empty((0, words_for(dims)), dtype=np.uint64), dims, _validate=False)

    @classmethod
    def from_vectors(cls, vectors: Sequence[BitVector]) -> "PointSet":
        if not vectors:
            raise ValueError("cannot infer dimension from an empty vector list")
        dims = vectors[0].dims
        for v in vectors:
            if v.dims != dims:
                raise DimensionMismatchError(v.dims, dims)
        return cls(np.vstack([v.words for v in vectors]), dims, _validate=False)

    @classmethod
    def random(cls, n: int, dims: int, rng: np.random.Generator) -> "PointSet":
        _check_dims(dims)
        mat = rng.integers(0, 1 << 64, size=(n, words_for(dims)), dtype=np.uint64)
        if n:
            mat[:, -1] &= np.uint64(_tail_mask(dims))
        return cls(mat, dims, _validate=False)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __len__(self) -> int:
        return self._matrix.shape[0]

    def __getitem__(self, i: int) -> BitVector:
        return BitVector(self._matrix[int(i)], self.dims, _validate=False)

    def __iter__(self) -> Iterator[BitVector]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, PointSet):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self._matrix, other._matrix))

    def weights(self) -> np.ndarray:
        return kernels.weight_rows(self._matrix)

    def distances_from(self, y: BitVector) -> np.ndarray:
        if y.dims != self.dims:
            raise DimensionMismatchError(y.dims, self.dims)
        return kernels.distances_to(self._matrix, y.words)


# -- CLSH1 file io --------------------------------------------------------


def _write_stream(points: PointSet, fh: BinaryIO) -> None:
    fh.write(_HEADER.pack(MAGIC_POINTS, FORMAT_VERSION, len(points), points.dims))
    if len(points):
        payload = _words_to_le_bytes(points.matrix)[:, : row_bytes_for(points.dims)]
        fh.write(np.ascontiguousarray(payload).tobytes())


def points_to_bytes(points: PointSet) -> bytes:
    import io

    buf = io.BytesIO()
    _write_stream(points, buf)
    return buf.getvalue()


def write_points(points: PointSet, path_or_file) -> None:
    """Serialize a point set in CLSH1 format (bit-exact round trip)."""
    if hasattr(path_or_file, "write"):
        _write_stream(points, path_or_file)
    else:
        with open(path_or_file, "wb") as fh:
            _write_stream(points, fh)


def points_from_bytes(data: bytes) -> PointSet:
    points, used = _parse_points(data)
    if used != len(data):
        raise TrailingDataError(f"{len(data) - used} trailing bytes after payload")
    return points


def _parse_points(data: bytes, offset: int = 0) -> tuple[PointSet, int]:
    """Parse one CLSH1 record starting at offset; returns (points, end offset)."""
    if len(data) - offset < _HEADER.size:
        raise TruncatedPayloadError("file shorter than the 24-byte header")
    magic, version, n, dims = _HEADER.unpack_from(data, offset)
    if magic != MAGIC_POINTS:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise InvalidHeaderError(f"unsupported version {version}")
    if dims == 0:
        raise InvalidHeaderError("dimension 0 is not a valid vector space")
    if n > _MAX_DECLARED_ROWS:
        raise DeclaredSizeError(f"declared row count {n} is not plausible")
    row = row_bytes_for(dims)
    need = n * row
    if need > (1 << 62):
        raise DeclaredSizeError(f"declared payload of {need} bytes overflows sanity limits")
    start = offset + _HEADER.size
    if len(data) - start < need:
        raise TruncatedPayloadError(
            f"payload needs {need} bytes for {n} rows, only {len(data) - start} present"
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=start).reshape(n, row)
    used = dims % 8
    if n and used and np.any(raw[:, -1] & np.uint8(0xFF << used & 0xFF)):
        raise PaddingBitsError(f"payload sets bits beyond dimension {dims}")
    mat = _le_bytes_to_words(raw, n, dims)
    return PointSet(mat, dims, _validate=False), start + need


def read_points(path_or_file) -> PointSet:
    """Read a CLSH1 file; raises a ClshFormatError subclass on violations."""
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    return points_from_bytes(data)
