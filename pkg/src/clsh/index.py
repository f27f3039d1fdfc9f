"""Bucketed similarity-search index over packed Hamming vectors.

Every mask in a family induces one hash table: point x lands in the bucket
keyed by x AND mask.  Bucket keys are stored as 128-bit digests (two uint64
lanes) of the masked vector, sorted so that a probe is two binary searches;
digest collisions are harmless because every candidate is verified against
its true distance before it can appear in an answer.

Query paths:

* query_near: scan masks in canonical order, return the first verified
  point at distance strictly below c*r.  If any point lies within r of the
  query, the covering property guarantees a hit in some bucket, so a miss
  proves there is no point within r (zero false negatives).
* query_all_within: probe every mask needed for the requested radius,
  deduplicate, verify, and return all points within the radius.
* nearest_neighbor: basic-kind families only.  Masks are scanned in index
  order; after v masks the leading prefix of the family covers radius
  floor(log2(v+1)) - 1, so the scan can stop as soon as the best distance
  found is at most floor(log2(v+1)) (or c times that, in approximate mode).

An optional parity split stores even- and odd-weight points in separate
halves, each with its own family.  Distances from any query to the two
halves have opposite parities, so per query one half only ever needs
radius r - 1, served by its mask-table prefix; points just past the radius
always fall in the reduced half, cutting the expected collision cost at
distance r + 1 below half of an unsplit index's.

On disk (magic CLSHI) an index stores its configuration, each half's
family, point ids and sorted digest tables, and the dataset itself.  The
digest section carries a checksum so corruption is detected at load time.
"""

from __future__ import annotations

import math
import struct
import threading
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .bits import (
    BadMagicError,
    BitVector,
    ClshFormatError,
    DimensionMismatchError,
    InvalidHeaderError,
    PointSet,
    TrailingDataError,
    TruncatedPayloadError,
    _le_bytes_to_words,
    _parse_points,
    _words_to_le_bytes,
    points_to_bytes,
    row_bytes_for,
)
from .families import (
    DEFAULT_MAX_ENTRIES,
    DEFAULT_MAX_MASKS,
    FamilyParams,
    MaskFamily,
    SchemeChoice,
    SchemeInfeasibleError,
    _parse_family,
    build_family,
    family_to_bytes,
    select_scheme,
)

MAGIC_INDEX = b"CLSHI\x00"
_INDEX_HEADER = struct.Struct("<6sHBBQQQQdQII")
_FLAG_PARITY = 1
_FLAG_SEEDED = 2


@dataclass(frozen=True)
class QueryOutcome:
    """One query's answer plus the work counters that produced it.

    result is a (point id, distance) pair or None.  matches carries the
    full id-sorted hit list for enumeration queries and is empty for the
    single-answer paths.  candidates_inspected counts every bucket entry
    popped (before deduplication); distance_computations counts verified
    unique candidates.
    """

    result: tuple[int, int] | None
    matches: tuple[tuple[int, int], ...] = ()
    masks_evaluated: int = 0
    candidates_inspected: int = 0
    distance_computations: int = 0


class CollisionStats:
    """Work counters accumulated across queries (thread-safe)."""

    __slots__ = ("_lock", "queries", "masks_evaluated", "candidates_inspected", "distance_computations")

    def __init__(self):
        self._lock = threading.Lock()
        self.queries = 0
        self.masks_evaluated = 0
        self.candidates_inspected = 0
        self.distance_computations = 0

    def reset(self) -> None:
        with self._lock:
            self.queries = 0
            self.masks_evaluated = 0
            self.candidates_inspected = 0
            self.distance_computations = 0

    def add(self, outcome: QueryOutcome) -> None:
        with self._lock:
            self.queries += 1
            self.masks_evaluated += outcome.masks_evaluated
            self.candidates_inspected += outcome.candidates_inspected
            self.distance_computations += outcome.distance_computations

    def as_dict(self) -> dict:
        return {
            "queries": self.queries,
            "masks_evaluated": self.masks_evaluated,
            "candidates_inspected": self.candidates_inspected,
            "distance_computations": self.distance_computations,
        }


def _replicate_rows(mat: np.ndarray, dims: int, times: int) -> np.ndarray:
    """Concatenate each row's bit string with itself `times` times."""
    if times == 1:
        return mat
    n = mat.shape[0]
    raw = _words_to_le_bytes(mat)[:, : row_bytes_for(dims)]
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :dims]
    rep = np.tile(bits, (1, times))
    packed = np.packbits(rep, axis=1, bitorder="little")
    return _le_bytes_to_words(packed, n, dims * times)


class _Part:
    """One half of the index: a family plus its bucket tables.

    ids are the global point ids stored here; the tables hold, per mask,
    the points' digest lanes and ids sorted by (hi, lo) so a probe is two
    binary searches.
    """

    __slots__ = ("ids", "family", "key_hi", "key_lo", "key_id", "salt_base")

    def __init__(
        self,
        ids: np.ndarray,
        family: MaskFamily,
        salt_base: int,
        eff_matrix: np.ndarray | None = None,
        tables: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    ):
        self.ids = np.ascontiguousarray(ids, dtype=np.uint32)
        self.family = family
        self.salt_base = salt_base
        n_masks = len(family)
        m = self.ids.shape[0]
        if tables is not None:
            self.key_hi, self.key_lo, self.key_id = tables
            return
        self.key_hi = np.empty((n_masks, m), dtype=np.uint64)
        self.key_lo = np.empty((n_masks, m), dtype=np.uint64)
        self.key_id = np.empty((n_masks, m), dtype=np.uint32)
        for h in range(n_masks):
            hi, lo = kernels.masked_digest_rows(eff_matrix, family.masks[h], salt_base + h)
            order = np.lexsort((lo, hi))
            self.key_hi[h] = hi[order]
            self.key_lo[h] = lo[order]
            self.key_id[h] = self.ids[order]

    def probe(self, h: int, query_words: np.ndarray) -> np.ndarray:
        """Global ids in mask h's bucket for the (effective-space) query."""
        qhi, qlo = kernels.masked_digest_rows(
            query_words[np.newaxis, :], self.family.masks[h], self.salt_base + h
        )
        hi_row, lo_row = self.key_hi[h], self.key_lo[h]
        i0 = int(np.searchsorted(hi_row, qhi[0], side="left"))
        i1 = int(np.searchsorted(hi_row, qhi[0], side="right"))
        if i0 == i1:
            return self.key_id[h][i0:i0]
        j0 = i0 + int(np.searchsorted(lo_row[i0:i1], qlo[0], side="left"))
        j1 = i0 + int(np.searchsorted(lo_row[i0:i1], qlo[0], side="right"))
        return self.key_id[h][j0:j1]


class Index:
    """Similarity-search index with guaranteed recall up to radius r.

    Query answers never miss a point within distance r of the query (for
    the structured family kinds; classical baseline families forgo this).
    """

    def __init__(
        self,
        points: PointSet,
        r: int,
        c: float,
        parts: list[_Part],
        replication: int = 1,
        parity_split: bool = False,
        seed: int | None = None,
        scheme: SchemeChoice | None = None,
    ):
        self.points = points
        self.r = r
        self.c = c
        self.parts = parts
        self.replication = replication
        self.parity_split = parity_split
        self.seed = seed
        self.scheme = scheme
        self.stats = CollisionStats()

    # -- basic facts -------------------------------------------------------

    @property
    def dims(self) -> int:
        return self.points.dims

    def __len__(self) -> int:
        return len(self.points)

    @property
    def params(self) -> FamilyParams:
        return self.parts[0].family.params

    @property
    def mask_count(self) -> int:
        return sum(len(p.family) for p in self.parts)

    @property
    def kind(self) -> str:
        return self.params.kind

    @property
    def guaranteed(self) -> bool:
        """Whether recall at radius r is structural rather than probabilistic."""
        return self.kind != "classical"

    # -- helpers -----------------------------------------------------------

    def _effective_query(self, y: BitVector) -> np.ndarray:
        if y.dims != self.dims:
            raise DimensionMismatchError(y.dims, self.dims, "query and index")
        if self.replication == 1:
            return y.words
        return _replicate_rows(y.words[np.newaxis, :], self.dims, self.replication)[0]

    def _check_radius(self, radius: int | None) -> int:
        if radius is None:
            return self.r
        if radius < 0 or radius > self.r:
            raise ValueError(f"radius {radius} outside [0, {self.r}] covered by this index")
        return radius

    def _part_radius(self, part_idx: int, radius: int, query_parity: int) -> int:
        """Effective search radius inside one half under the parity split.

        Distances from the query to this half's points all share one
        parity; when it differs from the radius's parity, distance ==
        radius cannot occur and the half is searched at radius - 1.
        """
        if not self.parity_split:
            return radius
        pair_parity = (query_parity ^ part_idx) & 1
        if pair_parity == radius & 1:
            return radius
        return radius - 1

    # -- query paths ---------------------------------------------------------

    def query_all_within(self, y: BitVector, radius: int | None = None) -> QueryOutcome:
        """All points within the given radius (default r), sorted by id.

        Radii above the build radius r are rejected: the covering guarantee
        does not reach them.  Classical-family indexes accept the call but
        provide only probabilistic recall.
        """
        radius = self._check_radius(radius)
        qwords = self._effective_query(y)
        qpar = y.weight() & 1
        masks = 0
        popped = 0
        found: list[np.ndarray] = []
        for idx, part in enumerate(self.parts):
            pr = self._part_radius(idx, radius, qpar)
            if pr < 0:
                continue
            count = part.family.prefix_count(pr * self.replication)
            for h in range(count):
                bucket = part.probe(h, qwords)
                popped += bucket.shape[0]
                if bucket.shape[0]:
                    found.append(bucket)
            masks += count
        if found:
            cand = np.unique(np.concatenate(found))
        else:
            cand = np.empty(0, dtype=np.uint32)
        dists = kernels.distances_to(self.points.matrix[cand], y.words)
        keep = dists <= radius
        matches = tuple((int(i), int(dv)) for i, dv in zip(cand[keep], dists[keep]))
        best = min(((dv, i) for i, dv in matches), default=None)
        outcome = QueryOutcome(
            result=(best[1], best[0]) if best else None,
            matches=matches,
            masks_evaluated=masks,
            candidates_inspected=popped,
            distance_computations=int(cand.shape[0]),
        )
        self.stats.add(outcome)
        return outcome

    def query_near(self, y: BitVector, radius: int | None = None, c: float | None = None) -> QueryOutcome:
        """First point found at distance strictly below c * radius, or None.

        None is a certificate that no point lies within the radius of the
        query (when the family kind carries the covering guarantee).
        """
        radius = self._check_radius(radius)
        factor = self.c if c is None else float(c)
        if factor <= 1.0:
            raise ValueError("approximation factor must exceed 1")
        threshold = factor * radius
        qwords = self._effective_query(y)
        qpar = y.weight() & 1
        masks = 0
        popped = 0
        verified = 0
        seen: set[int] = set()
        for idx, part in enumerate(self.parts):
            pr = self._part_radius(idx, radius, qpar)
            if pr < 0:
                continue
            count = part.family.prefix_count(pr * self.replication)
            for h in range(count):
                bucket = part.probe(h, qwords)
                masks += 1
                popped += bucket.shape[0]
                for gid in bucket:
                    gid = int(gid)
                    if gid in seen:
                        continue
                    seen.add(gid)
                    verified += 1
                    dist = kernels.distance_words(self.points.matrix[gid], y.words)
                    if dist < threshold:
                        outcome = QueryOutcome(
                            result=(gid, int(dist)),
                            masks_evaluated=masks,
                            candidates_inspected=popped,
                            distance_computations=verified,
                        )
                        self.stats.add(outcome)
                        return outcome
        outcome = QueryOutcome(
            result=None,
            masks_evaluated=masks,
            candidates_inspected=popped,
            distance_computations=verified,
        )
        self.stats.add(outcome)
        return outcome

    def nearest_neighbor(self, y: BitVector, c: float | None = None) -> QueryOutcome:
        """Nearest point by mask-prefix scan (basic-kind families only).

        Scans masks in canonical order across all halves; after v masks the
        scanned prefix covers radius floor(log2(v+1)) - 1, so any point not
        seen yet is at distance >= floor(log2(v+1)).  With c omitted the
        scan stops once the best distance drops to that level, making the
        answer provably exact; passing c > 1 relaxes the stop to c times
        the level and the answer to within factor c of optimal.  If the
        whole family is exhausted without the rule firing and nothing
        within the built radius was seen, there is no result.  Ties break
        toward the lowest point id among inspected candidates.
        """
        if self.kind != "basic":
            raise ValueError("nearest-neighbor scan needs the nested prefixes of the basic kind")
        if c is not None and c <= 1.0:
            raise ValueError("approximation factor must exceed 1")
        factor = 1.0 if c is None else float(c)
        qwords = self._effective_query(y)
        masks = 0
        popped = 0
        verified = 0
        seen: dict[int, int] = {}
        best: tuple[int, int] | None = None  # (distance, id)
        stopped = False
        n_masks = max(len(part.family) for part in self.parts)
        for v in range(1, n_masks + 1):
            for part in self.parts:
                if v > len(part.family):
                    continue
                bucket = part.probe(v - 1, qwords)
                masks += 1
                popped += bucket.shape[0]
                for gid in bucket:
                    gid = int(gid)
                    if gid in seen:
                        continue
                    verified += 1
                    dist = kernels.distance_words(self.points.matrix[gid], y.words)
                    seen[gid] = dist
                    if best is None or (dist, gid) < best:
                        best = (dist, gid)
            # best is an original-space distance; the covered level counts
            # replicated coordinates, so scale before comparing
            if best is not None and best[0] * self.replication <= factor * math.floor(math.log2(v + 1)):
                stopped = True
                break
        if best is not None and not stopped and best[0] > self.r:
            best = None
        outcome = QueryOutcome(
            result=(best[1], best[0]) if best is not None else None,
            masks_evaluated=masks,
            candidates_inspected=popped,
            distance_computations=verified,
        )
        self.stats.add(outcome)
        return outcome


# -- construction -----------------------------------------------------------


def _check_seed(seed) -> None:
    # serialized as one u64 word
    if seed is not None and not 0 <= int(seed) < 1 << 64:
        raise ValueError("seed must fit an unsigned 64-bit integer")


def _build_parts(
    points: PointSet,
    params: FamilyParams,
    replication: int,
    parity_split: bool,
    seed: int | None,
    max_masks: int,
) -> list[_Part]:
    root = np.random.SeedSequence(seed)
    if parity_split:
        parities = points.weights() & 1 if len(points) else np.empty(0, dtype=np.int64)
        groups = [np.flatnonzero(parities == pbit).astype(np.uint32) for pbit in (0, 1)]
    else:
        groups = [np.arange(len(points), dtype=np.uint32)]
    parts = []
    children = root.spawn(len(groups))
    for idx, ids in enumerate(groups):
        gen = np.random.default_rng(children[idx])
        fam = build_family(params, rng=gen, max_masks=max_masks)
        eff = _replicate_rows(points.matrix[ids], points.dims, replication)
        parts.append(_Part(ids, fam, salt_base=idx << 32, eff_matrix=eff))
    return parts


def build_index(
    points: PointSet,
    scheme: SchemeChoice | None = None,
    *,
    r: int | None = None,
    c: float | None = None,
    seed: int | None = None,
    parity_split: bool = False,
    kind: str = "auto",
    t: int | None = None,
    b: int | None = None,
    q: int | None = None,
    p: int | None = None,
    nonzero_m: bool = True,
    max_masks: int = DEFAULT_MAX_MASKS,
    max_entries: float = DEFAULT_MAX_ENTRIES,
) -> Index:
    """Build the bucket tables for a chosen scheme.

    Pass either a SchemeChoice or (r, c), in which case the scheme is
    selected here.  The memory budget is enforced at build time:
    max_entries caps total bucket entries (points times masks) and a
    SchemeInfeasibleError escapes if the choice does not fit.
    """
    n = len(points)
    _check_seed(seed)
    if scheme is None:
        if r is None or c is None:
            raise ValueError("need either a SchemeChoice or both r and c")
        scheme = select_scheme(
            max(n, 1), points.dims, r, c,
            kind=kind, t=t, b=b, q=q, p=p, nonzero_m=nonzero_m,
            max_masks=max_masks, max_entries=max_entries,
        )
    else:
        if r is not None or c is not None:
            raise ValueError("r and c are fixed by the SchemeChoice")
        if scheme.d != points.dims:
            raise DimensionMismatchError(scheme.d, points.dims, "scheme and points")
        entries = n * scheme.mask_count
        if scheme.mask_count > max_masks or entries > max_entries:
            raise SchemeInfeasibleError(
                f"scheme needs {scheme.mask_count} masks ({entries} bucket entries), beyond the memory budget",
                best=scheme,
            )
    if parity_split and scheme.params.kind != "basic":
        raise ValueError("the parity split needs mask-prefix structure (basic kind)")
    parts = _build_parts(points, scheme.params, scheme.replication, parity_split, seed, max_masks)
    return Index(
        points, scheme.r, scheme.c, parts,
        replication=scheme.replication, parity_split=parity_split,
        seed=seed, scheme=scheme,
    )


def build_index_from_family(
    points: PointSet,
    family: MaskFamily,
    c: float,
    r: int | None = None,
    seed: int | None = None,
) -> Index:
    """Wrap an already materialized family (or a classical baseline family)
    around a point set.  Replication and the parity split are not offered
    on this path; the family is used exactly as given."""
    params = family.params
    if params.d != points.dims:
        raise DimensionMismatchError(params.d, points.dims, "family and points")
    _check_seed(seed)
    if r is None:
        r = params.r
    ids = np.arange(len(points), dtype=np.uint32)
    part = _Part(ids, family, salt_base=0, eff_matrix=points.matrix)
    return Index(points, r, c, [part], seed=seed)


# -- module-level conveniences ------------------------------------------------


def query_near(index: Index, y: BitVector, radius: int | None = None, c: float | None = None) -> QueryOutcome:
    return index.query_near(y, radius, c)


def query_all_within(index: Index, y: BitVector, radius: int | None = None) -> QueryOutcome:
    return index.query_all_within(y, radius)


def nearest_neighbor(index: Index, y: BitVector, c: float | None = None) -> QueryOutcome:
    return index.nearest_neighbor(y, c)


# -- persistence --------------------------------------------------------------


def _tables_to_bytes(index: Index) -> bytes:
    chunks = []
    for part in index.parts:
        chunks.append(part.key_hi.astype("<u8").tobytes())
        chunks.append(part.key_lo.astype("<u8").tobytes())
        chunks.append(part.key_id.astype("<u4").tobytes())
    return b"".join(chunks)


def index_to_bytes(index: Index) -> bytes:
    """Serialize deterministically (same index state, same bytes).

    Layout: header, then per half a family dump and its id list, then the
    digest tables for all halves (each sorted by (mask id, digest), making
    the bytes canonical), then the dataset.  The header carries separate
    checksums for the digest section and the rest of the payload.
    """
    meta = bytearray()
    for part in index.parts:
        meta += family_to_bytes(part.family)
        meta += struct.pack("<Q", part.ids.shape[0])
        meta += part.ids.astype("<u4").tobytes()
    tables = _tables_to_bytes(index)
    tail = points_to_bytes(index.points)
    flags = (_FLAG_PARITY if index.parity_split else 0) | (
        _FLAG_SEEDED if index.seed is not None else 0
    )
    head = _INDEX_HEADER.pack(
        MAGIC_INDEX, 1, flags, len(index.parts),
        index.r, len(index.points), index.dims, index.replication,
        index.c, index.seed if index.seed is not None else 0,
        zlib.crc32(tables),
        zlib.crc32(bytes(meta) + tail),
    )
    return head + bytes(meta) + tables + tail


def save_index(index: Index, path_or_file) -> None:
    data = index_to_bytes(index)
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def index_from_bytes(data: bytes) -> Index:
    if len(data) < _INDEX_HEADER.size:
        raise TruncatedPayloadError("file shorter than the index header")
    (magic, version, flags, n_parts, r, n, d, replication,
     c, seed, crc_tables, crc_meta) = _INDEX_HEADER.unpack_from(data, 0)
    if magic != MAGIC_INDEX:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != 1:
        raise InvalidHeaderError(f"unsupported index version {version}")
    if n_parts < 1 or n_parts > 2:
        raise InvalidHeaderError(f"implausible part count {n_parts}")
    if replication < 1:
        raise InvalidHeaderError(f"implausible replication factor {replication}")
    offset = _INDEX_HEADER.size
    parts_raw = []
    meta_lo = offset
    for _ in range(n_parts):
        fam, offset = _parse_family(data, offset)
        if len(data) - offset < 8:
            raise TruncatedPayloadError("id list header truncated")
        (m,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        if m > n:
            raise InvalidHeaderError("id list longer than the dataset")
        if len(data) - offset < 4 * m:
            raise TruncatedPayloadError("id list truncated")
        ids = np.frombuffer(data, dtype="<u4", count=m, offset=offset).astype(np.uint32)
        offset += 4 * m
        parts_raw.append((fam, ids))
    meta = data[meta_lo:offset]
    tables = []
    tables_lo = offset
    for fam, ids in parts_raw:
        n_masks, m = len(fam), ids.shape[0]
        need = n_masks * m * 20
        if len(data) - offset < need:
            raise TruncatedPayloadError("digest section truncated")
        hi = np.frombuffer(data, dtype="<u8", count=n_masks * m, offset=offset).reshape(n_masks, m)
        offset += n_masks * m * 8
        lo = np.frombuffer(data, dtype="<u8", count=n_masks * m, offset=offset).reshape(n_masks, m)
        offset += n_masks * m * 8
        kid = np.frombuffer(data, dtype="<u4", count=n_masks * m, offset=offset).reshape(n_masks, m)
        offset += n_masks * m * 4
        tables.append((hi.astype(np.uint64), lo.astype(np.uint64), kid.astype(np.uint32)))
    if zlib.crc32(data[tables_lo:offset]) != crc_tables:
        raise ClshFormatError("corrupt digest section: checksum mismatch")
    points_lo = offset
    points, offset = _parse_points(data, offset)
    if offset != len(data):
        raise TrailingDataError(f"{len(data) - offset} trailing bytes after index payload")
    if zlib.crc32(meta + data[points_lo:]) != crc_meta:
        raise ClshFormatError("corrupt index metadata: checksum mismatch")
    if len(points) != n or points.dims != d:
        raise InvalidHeaderError("embedded dataset does not match the header")
    total = np.sort(np.concatenate([ids for _, ids in parts_raw])) if parts_raw else np.empty(0)
    if total.shape[0] != n or (n and not np.array_equal(total, np.arange(n, dtype=np.uint32))):
        raise InvalidHeaderError("part id lists do not partition the dataset")
    parts = []
    for idx, (fam, ids) in enumerate(parts_raw):
        if fam.params.d != d * replication:
            raise InvalidHeaderError("family dimension disagrees with replication")
        parts.append(_Part(ids, fam, salt_base=idx << 32, tables=tables[idx]))
    return Index(
        points, r, c, parts,
        replication=replication, parity_split=bool(flags & _FLAG_PARITY),
        seed=seed if flags & _FLAG_SEEDED else None,
    )


def load_index(path_or_file) -> Index:
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    return index_from_bytes(data)
