"""Mask families with a structural covering guarantee.

A mask family A is a list of bit masks a over d dimensions; the associated
hash functions are x -> x AND a.  Two vectors x, y collide under a mask
exactly when a AND (x XOR y) == 0, so the family guarantees recall at radius
r precisely when every error pattern of weight <= r is disjoint from at
least one mask ("r-covering").

Three constructions are provided, all r-covering for every random draw:

* basic: each dimension i gets a vector m(i) of r+1 bits; mask a(v), for
  each nonzero (r+1)-bit v, sets bit i when <m(i), v> is odd.  2^(r+1) - 1
  masks.  Any r error dimensions span at most r of the r+1 bit positions,
  so some nonzero v is orthogonal to all of them and its mask avoids the
  errors.
* partitioned: dimensions additionally belong to q consecutive partitions
  (out of b, cyclically) chosen by s(i); each dimension carries t vectors of
  t*floor(r*q/b) + 1 bits.  Mask a(v, k) sets bit i when i is in partition k
  and some <m(i)_j, v> is odd.  b * (2^(t*floor(r*q/b)+1) - 1) masks; a
  pigeonhole argument over the partitions restores the covering property.
* prime: like basic with bit vectors replaced by vectors over the integers
  mod a prime p; mask bit i is set when <m(i), v> is nonzero mod p.
  p^(r+1) - 1 masks; the rank argument carries over.

Masks are kept in a canonical order: v counts 1, 2, 3, ... as an unsigned
integer (base-p digits, least significant first, for the prime kind), and
the partitioned index is (v - 1) * b + (k - 1) with k ascending.  For the
basic kind the first 2^(s+1) - 1 masks form an s-covering subfamily for
every s <= r, which the nearest-neighbor scan and the parity-split query
path rely on.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from itertools import combinations
from typing import NamedTuple

import numpy as np

from . import kernels
from .bits import (
    BadMagicError,
    BitVector,
    ClshFormatError,
    InvalidHeaderError,
    PaddingBitsError,
    TrailingDataError,
    TruncatedPayloadError,
    _le_bytes_to_words,
    _words_to_le_bytes,
    row_bytes_for,
    words_for,
)

KINDS = ("basic", "partitioned", "prime", "classical")

# Widest exponent vector that fits a uint64 with headroom; families wider
# than this are unbuildable long before memory runs out anyway.
MAX_WIDTH = 63

DEFAULT_COVERING_BUDGET = 10**8
DEFAULT_MAX_MASKS = 1 << 22
DEFAULT_MAX_ENTRIES = 1 << 28

_MASK_CHUNK = 4096  # masks materialized per batch while building


class CoveringBudgetError(ValueError):
    """Exhaustive covering verification would exceed the pattern budget."""


class SchemeInfeasibleError(ValueError):
    """No scheme fits the memory budget; carries the best rejected candidate."""

    def __init__(self, message: str, best: "SchemeChoice | None" = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FamilyParams:
    """Parameters identifying one mask family construction.

    d is the dimension the masks live in, r the covering radius the family
    is built for.  t, b, q apply to the partitioned kind, p to the prime
    kind, and k (sampled positions per mask) plus count (number of masks)
    to the classical baseline.  nonzero_m selects the basic sampling
    codomain that excludes the zero vector; balanced selects round-robin
    value assignment instead of independent draws.
    """

    kind: str
    d: int
    r: int
    t: int = 1
    b: int = 1
    q: int = 1
    p: int = 2
    k: int = 0
    count: int = 0
    nonzero_m: bool = True
    balanced: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.r < 0:
            raise ValueError("radius must be nonnegative")
        # sampling flags only mean something where they apply
        if self.kind != "basic":
            object.__setattr__(self, "nonzero_m", False)
        if self.kind in ("prime", "classical"):
            object.__setattr__(self, "balanced", False)
        if self.kind == "partitioned":
            if self.t < 1 or self.b < 1 or self.q < 1:
                raise ValueError("partitioned parameters t, b, q must be >= 1")
            if self.q > self.b:
                raise ValueError(f"q={self.q} exceeds b={self.b}: a dimension cannot belong to more partitions than exist")
            if self.balanced and (self.q != 1 or self.t != 1 or self.d % self.b):
                raise ValueError("balanced partitioned sampling needs q=1, t=1 and b dividing d")
        elif self.kind == "prime":
            if self.p < 2:
                raise ValueError("p must be a prime >= 2")
        elif self.kind == "classical":
            if self.k < 1 or self.count < 1:
                raise ValueError("classical families need k >= 1 samples and count >= 1 masks")

    @property
    def r_part(self) -> int:
        """Per-partition covering radius floor(r*q/b) of the partitioned kind."""
        return (self.r * self.q) // self.b

    @property
    def width(self) -> int:
        """Length of the exponent vector v indexing the masks."""
        if self.kind == "basic":
            return self.r + 1
        if self.kind == "partitioned":
            return self.t * self.r_part + 1
        if self.kind == "prime":
            return self.r + 1
        raise ValueError("classical families are not indexed by an exponent vector")

    @property
    def mask_count(self) -> int:
        if self.kind == "basic":
            return (1 << (self.r + 1)) - 1
        if self.kind == "partitioned":
            return self.b * ((1 << self.width) - 1)
        if self.kind == "prime":
            return self.p ** (self.r + 1) - 1
        return self.count

    @property
    def zero_prob(self) -> float:
        """Probability that one mask bit is zero on any fixed dimension."""
        if self.kind == "basic":
            if self.balanced:
                raise ValueError("no per-dimension product law under balanced sampling")
            if self.nonzero_m:
                return ((1 << self.r) - 1) / ((1 << (self.r + 1)) - 1)
            return 0.5
        if self.kind == "partitioned":
            if self.balanced:
                raise ValueError("no per-dimension product law under balanced sampling")
            return 1.0 - (1.0 - 2.0**-self.t) * (self.q / self.b)
        if self.kind == "prime":
            return 1.0 / self.p
        raise ValueError("classical mask bits are not independent per dimension")


class CollisionExpectation(NamedTuple):
    exact: float
    bound: float


def collision_expectation(params: FamilyParams, distance: int) -> CollisionExpectation:
    """Expected number of masks colliding on a pair at the given distance.

    Returns the exact expectation together with the looser closed-form
    ceiling (2^(r+1-D) for basic, b*2^(t*r*q/b+1)*rho^D for partitioned,
    p^(r+1-D) for prime).  Both are per random mapping draw; the guarantee
    at distance <= r is structural and not part of this estimate.
    """
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    zp = params.zero_prob
    per_mask = zp**distance
    try:
        exact = float(params.mask_count) * per_mask
    except OverflowError:
        exact = math.inf
    if params.kind == "basic":
        bound = 2.0 ** (params.r + 1 - distance)
    elif params.kind == "partitioned":
        exponent = params.t * params.r * params.q / params.b + 1
        bound = params.b * 2.0**exponent * per_mask if exponent < 1000 else math.inf
    elif params.kind == "prime":
        bound = float(params.p) ** (params.r + 1 - distance)
    else:
        raise ValueError("use the baseline module for classical collision laws")
    return CollisionExpectation(exact, bound)


# -- mapping tables ---------------------------------------------------------


@dataclass(frozen=True)
class MappingTable:
    """The random per-dimension values that a family is built from.

    basic: m has shape (d,), values are (r+1)-bit integers.
    partitioned: m has shape (d, t) of width-bit integers and s has shape
    (d,) with the first partition (1-based) of each dimension's q-interval.
    prime: m has shape (d, r+1) with digits in [0, p).
    """

    params: FamilyParams
    m: np.ndarray
    s: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        p = self.params
        m = np.ascontiguousarray(self.m)
        if p.kind == "basic":
            if m.shape != (p.d,):
                raise ValueError(f"basic mapping needs shape ({p.d},), got {m.shape}")
            if int(m.max(initial=0)) >> p.width:
                raise ValueError(f"mapping values exceed {p.width} bits")
            m = m.astype(np.uint64, copy=False)
            if p.nonzero_m and not m.all():
                raise ValueError("nonzero-codomain mapping contains a zero value")
        elif p.kind == "partitioned":
            if m.shape != (p.d, p.t):
                raise ValueError(f"partitioned mapping needs shape ({p.d}, {p.t}), got {m.shape}")
            if int(m.max(initial=0)) >> p.width:
                raise ValueError(f"mapping values exceed {p.width} bits")
            m = m.astype(np.uint64, copy=False)
            if self.s is None:
                raise ValueError("partitioned mapping needs partition starts s")
            s = np.ascontiguousarray(self.s, dtype=np.int64)
            if s.shape != (p.d,) or s.min(initial=1) < 1 or s.max(initial=1) > p.b:
                raise ValueError(f"partition starts must lie in 1..{p.b}")
            s.flags.writeable = False
            object.__setattr__(self, "s", s)
        elif p.kind == "prime":
            if m.shape != (p.d, p.r + 1):
                raise ValueError(f"prime mapping needs shape ({p.d}, {p.r + 1}), got {m.shape}")
            m = m.astype(np.int64, copy=False)
            if m.min(initial=0) < 0 or m.max(initial=0) >= p.p:
                raise ValueError(f"mapping digits must lie in [0, {p.p})")
        else:
            raise ValueError("classical families do not use a mapping table")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _round_robin(values: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """First n entries of the repeated value cycle, shuffled; every value
    appears floor(n/len) or ceil(n/len) times."""
    reps = -(-n // values.shape[0])
    out = np.tile(values, reps)[:n].copy()
    rng.shuffle(out)
    return out


def sample_mapping(
    kind: str,
    d: int,
    r: int,
    *,
    t: int = 1,
    b: int = 1,
    q: int = 1,
    p: int = 2,
    rng=None,
    nonzero_m: bool = True,
    balanced: bool = False,
) -> MappingTable:
    """Draw the per-dimension random values for one family.

    For the basic kind, nonzero_m selects the codomain that excludes the
    zero vector (the default; strictly fewer expected far collisions) and
    balanced replaces independent draws by a shuffled round-robin over the
    nonzero values, which pins the mask weights near d/2.  The partitioned
    kind samples m uniformly over all width-bit values and s uniformly over
    the b interval starts, except under balanced (q=1, t=1, b | d), which
    assigns contiguous equal blocks to partitions and round-robins the
    nonzero values inside each block.  The prime kind samples digit vectors
    uniformly.
    """
    if kind == "basic":
        params = FamilyParams("basic", d, r, nonzero_m=nonzero_m, balanced=balanced)
    elif kind == "partitioned":
        params = FamilyParams("partitioned", d, r, t=t, b=b, q=q, nonzero_m=False, balanced=balanced)
    elif kind == "prime":
        params = FamilyParams("prime", d, r, p=p)
    else:
        raise ValueError(f"cannot sample a mapping for kind {kind!r}")
    if params.width > MAX_WIDTH:
        raise ValueError(f"exponent width {params.width} exceeds {MAX_WIDTH} bits")
    gen = _as_rng(rng)

    if kind == "basic":
        top = 1 << params.width
        if balanced:
            values = np.arange(1, top, dtype=np.uint64)
            m = _round_robin(values, d, gen)
        elif nonzero_m:
            m = gen.integers(1, top, size=d, dtype=np.uint64)
        else:
            m = gen.integers(0, top, size=d, dtype=np.uint64)
        return MappingTable(params, m)

    if kind == "partitioned":
        top = 1 << params.width
        if balanced:
            block = d // b
            s = np.repeat(np.arange(1, b + 1, dtype=np.int64), block)
            values = np.arange(1, top, dtype=np.uint64)
            m = np.concatenate([_round_robin(values, block, gen) for _ in range(b)])
            return MappingTable(params, m.reshape(d, 1), s)
        m = gen.integers(0, top, size=(d, t), dtype=np.uint64)
        s = gen.integers(1, b + 1, size=d, dtype=np.int64)
        return MappingTable(params, m, s)

    m = gen.integers(0, p, size=(d, r + 1), dtype=np.int64)
    return MappingTable(params, m)


# -- mask construction ------------------------------------------------------


class MaskFamily:
    """A materialized, canonically ordered list of masks."""

    __slots__ = ("params", "seed", "_masks")

    def __init__(self, params: FamilyParams, masks: np.ndarray, seed: int | None = None):
        masks = np.ascontiguousarray(masks, dtype=np.uint64)
        if masks.ndim != 2 or masks.shape[1] != words_for(params.d):
            raise ValueError(f"mask matrix shape {masks.shape} does not fit d={params.d}")
        if masks.shape[0] != params.mask_count:
            raise ValueError(
                f"expected {params.mask_count} masks for these parameters, got {masks.shape[0]}"
            )
        masks.flags.writeable = False
        self.params = params
        self.seed = seed
        self._masks = masks

    @property
    def masks(self) -> np.ndarray:
        return self._masks

    @property
    def dims(self) -> int:
        return self.params.d

    def __len__(self) -> int:
        return self._masks.shape[0]

    def mask(self, h: int) -> BitVector:
        return BitVector(self._masks[h], self.params.d, _validate=False)

    def __iter__(self):
        for h in range(len(self)):
            yield self.mask(h)

    def weights(self) -> np.ndarray:
        return kernels.weight_rows(self._masks)

    def prefix_count(self, radius: int) -> int:
        """How many leading masks already cover the given smaller radius.

        Only the basic kind has the nested-subfamily structure; other kinds
        need all their masks regardless of the query radius.
        """
        if self.params.kind == "basic" and radius < self.params.r:
            if radius < 0:
                return 0
            return (1 << (radius + 1)) - 1
        return len(self)


def _pack_bit_rows(bits: np.ndarray, d: int) -> np.ndarray:
    """(n, d) 0/1 array -> (n, words) packed rows."""
    raw = np.packbits(bits, axis=1, bitorder="little")
    return _le_bytes_to_words(raw, bits.shape[0], d)


def _parity_bits(m: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """Parity of popcount(m & v) for every (exponent, dimension) pair."""
    anded = m[np.newaxis, :] & exponents[:, np.newaxis]
    return (kernels.popcount_u64(anded) & np.uint64(1)).astype(np.uint8)


def build_basic_masks(d: int, r: int, mapping: MappingTable, max_masks: int = DEFAULT_MAX_MASKS) -> MaskFamily:
    """Materialize the 2^(r+1) - 1 basic masks for a mapping."""
    params = mapping.params
    if params.kind != "basic" or params.d != d or params.r != r:
        raise ValueError(f"mapping was sampled for {params.kind} d={params.d} r={params.r}")
    count = params.mask_count
    if count > max_masks:
        raise ValueError(f"family of {count} masks exceeds the build limit {max_masks}")
    out = np.empty((count, words_for(d)), dtype=np.uint64)
    for lo in range(1, count + 1, _MASK_CHUNK):
        hi = min(lo + _MASK_CHUNK, count + 1)
        exps = np.arange(lo, hi, dtype=np.uint64)
        out[lo - 1 : hi - 1] = _pack_bit_rows(_parity_bits(mapping.m, exps), d)
    return MaskFamily(params, out, mapping.seed)


def interval_members(start: int, b: int, q: int) -> list[int]:
    """The q consecutive partitions (1-based, cyclic) starting at start."""
    return [(start - 1 + j) % b + 1 for j in range(q)]


def build_partitioned_masks(
    d: int,
    r: int,
    t: int,
    b: int,
    q: int,
    mapping: MappingTable,
    max_masks: int = DEFAULT_MAX_MASKS,
) -> MaskFamily:
    """Materialize the b * (2^(t*floor(rq/b)+1) - 1) partitioned masks."""
    params = mapping.params
    if params.kind != "partitioned" or (params.d, params.r, params.t, params.b, params.q) != (d, r, t, b, q):
        raise ValueError("mapping parameters do not match the requested family")
    count = params.mask_count
    if count > max_masks:
        raise ValueError(f"family of {count} masks exceeds the build limit {max_masks}")
    # membership[k-1, i] = dimension i belongs to partition k
    offsets = (np.arange(1, b + 1, dtype=np.int64)[:, np.newaxis] - mapping.s[np.newaxis, :]) % b
    membership = (offsets < q).astype(np.uint8)
    n_v = (1 << params.width) - 1
    out = np.empty((count, words_for(d)), dtype=np.uint64)
    chunk = max(1, _MASK_CHUNK // b)
    for lo in range(1, n_v + 1, chunk):
        hi = min(lo + chunk, n_v + 1)
        exps = np.arange(lo, hi, dtype=np.uint64)
        hit = np.zeros((hi - lo, d), dtype=np.uint8)
        for j in range(t):
            hit |= _parity_bits(mapping.m[:, j], exps)
        # (n_v_chunk, b, d): mask for (v, k) = membership AND any-odd-parity
        bits = (hit[:, np.newaxis, :] & membership[np.newaxis, :, :]).reshape(-1, d)
        out[(lo - 1) * b : (hi - 1) * b] = _pack_bit_rows(bits, d)
    return MaskFamily(params, out, mapping.seed)


def _prime_digits(lo: int, hi: int, p: int, width: int) -> np.ndarray:
    """Exponent integers lo..hi-1 as base-p digit rows, least digit first."""
    vals = np.arange(lo, hi, dtype=np.int64)
    digits = np.empty((vals.shape[0], width), dtype=np.int64)
    for j in range(width):
        digits[:, j] = vals % p
        vals = vals // p
    return digits


def build_prime_masks(d: int, r: int, p: int, mapping: MappingTable, max_masks: int = DEFAULT_MAX_MASKS) -> MaskFamily:
    """Materialize the p^(r+1) - 1 prime-kind masks for a mapping."""
    params = mapping.params
    if params.kind != "prime" or (params.d, params.r, params.p) != (d, r, p):
        raise ValueError("mapping parameters do not match the requested family")
    count = params.mask_count
    if count > max_masks:
        raise ValueError(f"family of {count} masks exceeds the build limit {max_masks}")
    if (r + 1) * (p - 1) * (p - 1) >= (1 << 62):
        raise ValueError("prime modulus too large for exact dot products")
    out = np.empty((count, words_for(d)), dtype=np.uint64)
    for lo in range(1, count + 1, _MASK_CHUNK):
        hi = min(lo + _MASK_CHUNK, count + 1)
        digits = _prime_digits(lo, hi, p, params.width)
        dots = (digits @ mapping.m.T) % p
        out[lo - 1 : hi - 1] = _pack_bit_rows((dots != 0).astype(np.uint8), d)
    return MaskFamily(params, out, mapping.seed)


def build_family(params: FamilyParams, rng=None, max_masks: int = DEFAULT_MAX_MASKS) -> MaskFamily:
    """Sample a mapping and materialize the family in one step."""
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
    gen = _as_rng(rng)
    if params.kind == "basic":
        mapping = sample_mapping(
            "basic", params.d, params.r, rng=gen, nonzero_m=params.nonzero_m, balanced=params.balanced
        )
        fam = build_basic_masks(params.d, params.r, mapping, max_masks)
    elif params.kind == "partitioned":
        mapping = sample_mapping(
            "partitioned", params.d, params.r, t=params.t, b=params.b, q=params.q,
            rng=gen, nonzero_m=False, balanced=params.balanced,
        )
        fam = build_partitioned_masks(params.d, params.r, params.t, params.b, params.q, mapping, max_masks)
    elif params.kind == "prime":
        mapping = sample_mapping("prime", params.d, params.r, p=params.p, rng=gen)
        fam = build_prime_masks(params.d, params.r, params.p, mapping, max_masks)
    else:
        raise ValueError("use the baseline module to build classical families")
    fam.seed = seed
    return fam


# -- covering verification --------------------------------------------------


class CoveringResult(NamedTuple):
    is_covering: bool
    witness: BitVector | None
    patterns_checked: int


def _mask_ints(family) -> tuple[list[int], int]:
    if isinstance(family, MaskFamily):
        mat, d = family.masks, family.dims
    elif isinstance(family, (list, tuple)) and family and isinstance(family[0], BitVector):
        d = family[0].dims
        mat = np.vstack([v.words for v in family])
    else:
        raise TypeError("expected a MaskFamily or a non-empty list of BitVector masks")
    raw = _words_to_le_bytes(mat)
    return [int.from_bytes(row.tobytes(), "little") for row in raw], d


def is_r_covering(family, r: int, budget: int = DEFAULT_COVERING_BUDGET) -> CoveringResult:
    """Exhaustively verify that every error pattern of weight <= r avoids
    some mask entirely.

    Enumerates patterns of weight r down to 1 and short-circuits on the
    first miss, returning it as a witness.  Refuses (rather than silently
    sampling) when the pattern count exceeds the budget.
    """
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if isinstance(family, (list, tuple)) and not family:
        # nothing can be covered without masks
        return CoveringResult(False, None, 0)
    masks, d = _mask_ints(family)
    heaviest = min(r, d)
    total = sum(math.comb(d, w) for w in range(1, heaviest + 1))
    if total > budget:
        raise CoveringBudgetError(
            f"{total} patterns exceed the verification budget of {budget}"
        )
    bit = [1 << i for i in range(d)]
    checked = 0
    for w in range(heaviest, 0, -1):
        for positions in combinations(range(d), w):
            pattern = 0
            for pos in positions:
                pattern |= bit[pos]
            checked += 1
            for a in masks:
                if a & pattern == 0:
                    break
            else:
                return CoveringResult(False, BitVector.from_int(pattern, d), checked)
    return CoveringResult(True, None, checked)


def family_weight(family) -> Fraction:
    """Smallest mask weight divided by the dimension, as an exact rational."""
    if isinstance(family, MaskFamily):
        if not len(family):
            raise ValueError("empty family has no weight")
        return Fraction(int(family.weights().min()), family.dims)
    masks, d = _mask_ints(family)
    return Fraction(min(m.bit_count() for m in masks), d)


# -- primes -----------------------------------------------------------------

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _is_prime_u64(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for all 64-bit inputs."""
    if n < 2:
        return False
    for sp in _MR_BASES:
        if n % sp == 0:
            return n == sp
    d = n - 1
    s = (d & -d).bit_length() - 1
    d >>= s
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime_above(x) -> int:
    """Smallest prime strictly greater than x (x may be fractional)."""
    if x != x or x < 0:
        raise ValueError(f"cannot search for primes above {x!r}")
    n = math.floor(x) + 1
    if n <= 2:
        return 2
    if n % 2 == 0:
        n += 1
    while True:
        if n >= (1 << 64):
            raise OverflowError("next prime exceeds 64 bits")
        if _is_prime_u64(n):
            return n
        n += 2


# -- scheme selection -------------------------------------------------------


@dataclass(frozen=True)
class SchemeChoice:
    """A fully specified family construction for an (n, d, r, c) instance.

    params describes the family over the effective dimension (d times the
    replication factor); r and d keep the caller's original values.  kappa
    is the predicted number of colliding (point, mask) pairs per query when
    all n points sit at the approximation threshold distance, and cost is
    mask_count + kappa, the quantity the selector minimizes.
    """

    params: FamilyParams
    n: int
    d: int
    r: int
    c: float
    cr: int
    replication: int = 1
    label: str = "grid"
    mask_count: int = 0
    kappa: float = 0.0
    cost: float = 0.0
    overhead: float = 0.0
    overhead_class: str = "general"


def approx_threshold(r: int, c: float) -> int:
    """The integer far-distance threshold ceil(c * r)."""
    return math.ceil(c * r - 1e-12)


def _overhead_class(n: int, cr: int) -> str:
    if n >= 2:
        ratio = math.log2(n) / cr
        if abs(ratio - round(ratio)) < 1e-9:
            return "O(1)"
        if n >= 5 and cr <= math.log2(n) / (3 * math.log2(math.log2(n))):
            return "polylog"
    return "general"


def make_choice(
    params: FamilyParams,
    n: int,
    d: int,
    r: int,
    c: float,
    replication: int = 1,
    label: str = "grid",
) -> SchemeChoice:
    cr = approx_threshold(r, c)
    count = params.mask_count
    if params.width > 200:
        kappa = math.inf
        cost = math.inf
    else:
        kappa = n * collision_expectation(params, cr * replication).exact
        try:
            cost = float(count) + kappa
        except OverflowError:
            cost = math.inf
    denom = 2.0 * n ** (1.0 / c)
    overhead = cost / denom if math.isfinite(cost) else math.inf
    return SchemeChoice(
        params=params, n=n, d=d, r=r, c=c, cr=cr, replication=replication,
        label=label, mask_count=count, kappa=kappa, cost=cost,
        overhead=overhead, overhead_class=_overhead_class(n, cr),
    )


def scheme_a1(n: int, d: int, r: int, c: float, nonzero_m: bool = True) -> SchemeChoice:
    """Repetition scheme: basic construction with the exponent width scaled
    so that far collisions cost about as much as the masks themselves."""
    cr = approx_threshold(r, c)
    t = max(1, math.ceil(math.log2(max(n, 2)) / cr)) if n > 1 else 1
    if t == 1:
        params = FamilyParams("basic", d, r, nonzero_m=nonzero_m)
    else:
        params = FamilyParams("partitioned", d, r, t=t, b=1, q=1, nonzero_m=False)
    return make_choice(params, n, d, r, c, label="A1")

def scheme_a2(n: int, d: int, r: int, c: float) -> SchemeChoice:
    """Partition scheme: b = r partitions with logarithmic interval width.

    The interval width 2*ceil(ln(n)/c) is clamped to r so that membership
    never exceeds the partition count; the clamp keeps the size bound
    8 r n^(ln4/c) intact.
    """
    q0 = 2 * math.ceil(math.log(max(n, 2)) / c)
    q = max(1, min(q0, r))
    params = FamilyParams("partitioned", d, r, t=1, b=max(r, 1), q=q, nonzero_m=False)
    return make_choice(params, n, d, r, c, label="A2")


def scheme_a3(n: int, d: int, r: int, c: float) -> SchemeChoice:
    """Prime scheme with the replication trick for very small c*r.

    When c*r falls well below log2(n) / (3 log2 log2 n), vectors are
    conceptually repeated t times (scaling every distance by t) so the
    prime construction operates at radius r*t; the index applies the same
    repetition transparently.
    """
    cr = approx_threshold(r, c)
    t_rep = 1
    if n >= 5:
        l3 = math.log2(n) / (3 * math.log2(math.log2(n)))
        if cr <= l3:
            t_rep = max(1, math.floor(l3 / cr))
    p = next_prime_above(n ** (1.0 / (cr * t_rep))) if n > 1 else 2
    params = FamilyParams("prime", d * t_rep, r * t_rep, p=p)
    return make_choice(params, n, d, r, c, replication=t_rep, label="A3")


def _grid_candidates(n: int, d: int, r: int, c: float, nonzero_m: bool):
    cr = approx_threshold(r, c)
    t_cap = max(1, math.ceil(math.log2(max(n, 2)) / cr)) + 1
    b_cap = min(max(r, 64), d)
    q_cap = 2 * math.ceil(math.log(max(n, 2)) / c) + 2
    for t in range(1, t_cap + 1):
        for b in range(1, b_cap + 1):
            for q in range(1, min(b, q_cap) + 1):
                if t == 1 and b == 1 and q == 1:
                    params = FamilyParams("basic", d, r, nonzero_m=nonzero_m)
                else:
                    params = FamilyParams("partitioned", d, r, t=t, b=b, q=q, nonzero_m=False)
                yield make_choice(params, n, d, r, c, label="grid")


def _constructible(choice: SchemeChoice, max_masks: int, max_entries: int) -> bool:
    if choice.params.kind != "classical" and choice.params.width > MAX_WIDTH:
        return False
    if choice.mask_count > max_masks:
        return False
    if choice.n * choice.mask_count > max_entries:
        return False
    return True


def _rank(choice: SchemeChoice):
    p = choice.params
    return (choice.cost, float(choice.mask_count), KINDS.index(p.kind), p.t, p.b, p.q, p.p)


def select_scheme(
    n: int,
    d: int,
    r: int,
    c: float,
    *,
    kind: str = "auto",
    t: int | None = None,
    b: int | None = None,
    q: int | None = None,
    p: int | None = None,
    nonzero_m: bool = True,
    max_masks: int = DEFAULT_MAX_MASKS,
    max_entries: float = math.inf,
) -> SchemeChoice:
    """Pick family parameters for an instance, minimizing mask count plus
    predicted far collisions (kappa, evaluated at distance ceil(c*r)).

    kind="auto" compares the three named schemes and a bounded parameter
    grid; naming a kind pins the construction and optional t/b/q/p override
    its defaults.  Candidates whose mask tables would not fit the given
    memory budget are rejected; if nothing fits, the raised error carries
    the best rejected candidate for diagnostics.  Selection itself is
    analytic, so max_entries (bucket entries, n times the mask count)
    defaults to unbounded; index builds pass their real budget.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if d < 1 or r < 1 or r > d:
        raise ValueError("need 1 <= r <= d")
    if c <= 1.0:
        raise ValueError("approximation factor c must exceed 1")

    if kind != "auto":
        if kind == "basic":
            params = FamilyParams("basic", d, r, nonzero_m=nonzero_m)
        elif kind == "partitioned":
            base = scheme_a2(n, d, r, c).params
            params = FamilyParams(
                "partitioned", d, r,
                t=t or base.t, b=b or base.b, q=q or base.q, nonzero_m=False,
            )
        elif kind == "prime":
            auto = scheme_a3(n, d, r, c)
            if p is not None:
                params = replace(auto.params, p=p)
                choice = make_choice(params, n, d, r, c, replication=auto.replication, label="A3")
            else:
                choice = auto
            if not _constructible(choice, max_masks, max_entries):
                raise SchemeInfeasibleError(
                    f"prime family needs {choice.mask_count} masks, beyond the memory budget",
                    best=choice,
                )
            return choice
        else:
            raise ValueError(f"unknown scheme kind {kind!r}")
        choice = make_choice(params, n, d, r, c, label=kind)
        if not _constructible(choice, max_masks, max_entries):
            raise SchemeInfeasibleError(
                f"{kind} family needs {choice.mask_count} masks, beyond the memory budget",
                best=choice,
            )
        return choice

    candidates = [scheme_a1(n, d, r, c, nonzero_m), scheme_a2(n, d, r, c), scheme_a3(n, d, r, c)]
    candidates.extend(_grid_candidates(n, d, r, c, nonzero_m))
    feasible = [ch for ch in candidates if _constructible(ch, max_masks, max_entries)]
    if not feasible:
        best = min(candidates, key=lambda ch: float(ch.mask_count.bit_length()))
        raise SchemeInfeasibleError(
            f"no scheme fits the memory budget (best candidate still needs {best.mask_count} masks)",
            best=best,
        )
    return min(feasible, key=_rank)


def overhead_estimate(choice: SchemeChoice) -> float:
    """Predicted cost relative to the ideal 2 n^(1/c) memory accesses."""
    return choice.cost / (2.0 * choice.n ** (1.0 / choice.c))


# -- family file io (CLSHA) -------------------------------------------------

MAGIC_FAMILY = b"CLSHA\x00"
_FAMILY_HEADER = struct.Struct("<6sHBBQQQQQQQQQ")
_KIND_CODES = {kind: i for i, kind in enumerate(KINDS)}
_FLAG_NONZERO = 1
_FLAG_BALANCED = 2
_FLAG_SEEDED = 4


def family_to_bytes(family: MaskFamily) -> bytes:
    p = family.params
    flags = (
        (_FLAG_NONZERO if p.nonzero_m else 0)
        | (_FLAG_BALANCED if p.balanced else 0)
        | (_FLAG_SEEDED if family.seed is not None else 0)
    )
    head = _FAMILY_HEADER.pack(
        MAGIC_FAMILY, 1, _KIND_CODES[p.kind], flags,
        p.d, p.r, p.t, p.b, p.q, p.p, p.k,
        family.seed if family.seed is not None else 0,
        len(family),
    )
    payload = _words_to_le_bytes(family.masks)[:, : row_bytes_for(p.d)]
    return head + np.ascontiguousarray(payload).tobytes()


def family_from_bytes(data: bytes) -> MaskFamily:
    fam, used = _parse_family(data)
    if used != len(data):
        raise TrailingDataError(f"{len(data) - used} trailing bytes after mask payload")
    return fam


def _parse_family(data: bytes, offset: int = 0) -> tuple[MaskFamily, int]:
    if len(data) - offset < _FAMILY_HEADER.size:
        raise TruncatedPayloadError("family header truncated")
    (magic, version, kind_code, flags, d, r, t, b, q, p, k, seed, count) = _FAMILY_HEADER.unpack_from(data, offset)
    if magic != MAGIC_FAMILY:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != 1:
        raise InvalidHeaderError(f"unsupported family version {version}")
    if kind_code >= len(KINDS):
        raise InvalidHeaderError(f"unknown kind code {kind_code}")
    kind = KINDS[kind_code]
    try:
        # k and count are only family parameters for the classical kind;
        # for the structured kinds the count is implied and k is unused.
        params = FamilyParams(
            kind, d, r, t=t, b=b, q=q, p=p,
            k=k if kind == "classical" else 0,
            count=count if kind == "classical" else 0,
            nonzero_m=bool(flags & _FLAG_NONZERO), balanced=bool(flags & _FLAG_BALANCED),
        )
    except ValueError as exc:
        raise InvalidHeaderError(str(exc)) from exc
    if params.mask_count != count:
        raise InvalidHeaderError(
            f"header declares {count} masks but the parameters give {params.mask_count}"
        )
    row = row_bytes_for(d)
    start = offset + _FAMILY_HEADER.size
    need = count * row
    if len(data) - start < need:
        raise TruncatedPayloadError("mask payload truncated")
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=start).reshape(count, row)
    used_bits = d % 8
    if count and used_bits and np.any(raw[:, -1] & np.uint8(0xFF << used_bits & 0xFF)):
        raise PaddingBitsError(f"mask payload sets bits beyond dimension {d}")
    masks = _le_bytes_to_words(raw, count, d)
    fam = MaskFamily(params, masks, seed if flags & _FLAG_SEEDED else None)
    return fam, start + need


def write_family(family: MaskFamily, path_or_file) -> None:
    data = family_to_bytes(family)
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def read_family(path_or_file) -> MaskFamily:
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    return family_from_bytes(data)
