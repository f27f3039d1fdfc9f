"""Index construction, query paths, counters, and the binary format."""

import struct

import numpy as np
import pytest

import clsh.kernels as kernels
from clsh.bits import (
    BadMagicError,
    BitVector,
    ClshFormatError,
    DimensionMismatchError,
    InvalidHeaderError,
    PointSet,
    TrailingDataError,
    TruncatedPayloadError,
    hamming_distance,
)
from clsh.baseline import build_classical
from clsh.families import (
    FamilyParams,
    SchemeInfeasibleError,
    build_family,
    family_to_bytes,
    is_r_covering,
    make_choice,
)
from clsh.index import (
    Index,
    build_index,
    build_index_from_family,
    index_from_bytes,
    index_to_bytes,
    load_index,
    nearest_neighbor,
    query_all_within,
    query_near,
    save_index,
)


def small_index(rng, n=200, d=32, r=3, seed=7, **kw):
    points = PointSet.random(n, d, rng)
    return points, build_index(points, r=r, c=2.0, seed=seed, kind="basic", **kw)


def oracle_within(points: PointSet, y: BitVector, radius: int):
    dists = points.distances_from(y)
    ids = np.flatnonzero(dists <= radius)
    return [(int(i), int(dists[i])) for i in ids]


class TestBuild:
    def test_shape_and_flags(self, rng):
        points, idx = small_index(rng)
        assert len(idx) == 200
        assert idx.dims == 32
        assert idx.kind == "basic"
        assert idx.mask_count == 15
        assert idx.guaranteed
        assert idx.replication == 1 and not idx.parity_split

    def test_scheme_and_radius_are_exclusive(self, rng):
        points = PointSet.random(10, 16, rng)
        choice = make_choice(FamilyParams("basic", 16, 2), 10, 16, 2, 2.0)
        with pytest.raises(ValueError):
            build_index(points, choice, r=2, c=2.0)
        with pytest.raises(ValueError):
            build_index(points)  # neither given

    def test_scheme_dimension_checked(self, rng):
        points = PointSet.random(10, 16, rng)
        choice = make_choice(FamilyParams("basic", 24, 2), 10, 24, 2, 2.0)
        with pytest.raises(DimensionMismatchError):
            build_index(points, choice)

    def test_entry_budget_enforced(self, rng):
        points = PointSet.random(64, 32, rng)
        with pytest.raises(SchemeInfeasibleError) as err:
            build_index(points, r=3, c=2.0, kind="basic", max_entries=100)
        assert "memory budget" in str(err.value)
        # the precomputed-scheme path reports the entry total it rejected
        choice = make_choice(FamilyParams("basic", 32, 3), 64, 32, 3, 2.0)
        with pytest.raises(SchemeInfeasibleError) as err:
            build_index(points, choice, max_entries=100)
        assert "bucket entries" in str(err.value)
        assert err.value.best is choice

    def test_parity_split_needs_basic(self, rng):
        points = PointSet.random(32, 16, rng)
        with pytest.raises(ValueError):
            build_index(points, r=2, c=2.0, kind="prime", parity_split=True)

    def test_seed_range_checked(self, rng):
        points = PointSet.random(4, 16, rng)
        with pytest.raises(ValueError):
            build_index(points, r=2, c=2.0, seed=1 << 64)

    def test_wrapped_family_keeps_no_guarantee(self, rng):
        points = PointSet.random(50, 64, rng)
        fam = build_classical(64, 10, 20, r=4, rng=rng)
        idx = build_index_from_family(points, fam, c=2.0)
        assert not idx.guaranteed
        assert idx.r == 4 and idx.mask_count == 20

    def test_wrapped_family_dimension_checked(self, rng):
        points = PointSet.random(10, 32, rng)
        fam = build_family(FamilyParams("basic", 16, 2), rng=rng)
        with pytest.raises(DimensionMismatchError):
            build_index_from_family(points, fam, c=2.0)


class TestQueryAllWithin:
    def test_matches_linear_scan(self, rng):
        points, idx = small_index(rng, n=300, d=32, r=3)
        hits = 0
        for _ in range(50):
            y = points[int(rng.integers(300))] ^ BitVector.from_positions(
                rng.choice(32, size=int(rng.integers(0, 4)), replace=False).tolist(), 32
            )
            out = idx.query_all_within(y)
            assert list(out.matches) == oracle_within(points, y, 3)
            hits += len(out.matches)
        assert hits > 0  # the loop really exercised nonempty answers

    def test_matches_sorted_by_id(self, rng):
        points, idx = small_index(rng, n=500, d=16, r=2)
        y = points[0]
        out = idx.query_all_within(y)
        ids = [i for i, _ in out.matches]
        assert ids == sorted(ids)
        assert len(out.matches) >= 1  # the point itself

    def test_result_is_closest_lowest_id(self, rng):
        points, idx = small_index(rng, n=400, d=16, r=2)
        y = BitVector.random(16, rng)
        out = idx.query_all_within(y)
        if out.matches:
            want = min((d, i) for i, d in out.matches)
            assert out.result == (want[1], want[0])
        else:
            assert out.result is None

    def test_radius_validation(self, rng):
        points, idx = small_index(rng)
        y = points[0]
        with pytest.raises(ValueError):
            idx.query_all_within(y, radius=4)
        with pytest.raises(ValueError):
            idx.query_all_within(y, radius=-1)

    def test_smaller_radius_uses_prefix(self, rng):
        points, idx = small_index(rng, r=3)
        y = points[0]
        assert idx.query_all_within(y, radius=3).masks_evaluated == 15
        assert idx.query_all_within(y, radius=2).masks_evaluated == 7
        assert idx.query_all_within(y, radius=1).masks_evaluated == 3
        assert idx.query_all_within(y, radius=0).masks_evaluated == 1

    def test_smaller_radius_matches_oracle(self, rng):
        points, idx = small_index(rng, n=300, d=16, r=3)
        for radius in (0, 1, 2):
            for _ in range(20):
                y = BitVector.random(16, rng)
                out = idx.query_all_within(y, radius=radius)
                assert list(out.matches) == oracle_within(points, y, radius)

    def test_query_dimension_checked(self, rng):
        points, idx = small_index(rng)
        with pytest.raises(DimensionMismatchError):
            idx.query_all_within(BitVector.zeros(31))

    def test_module_level_wrappers(self, rng):
        points, idx = small_index(rng)
        y = points[3]
        assert query_all_within(idx, y).matches == idx.query_all_within(y).matches
        assert query_near(idx, y).result == (3, 0)
        assert nearest_neighbor(idx, y).result == (3, 0)


class TestQueryNear:
    def test_always_finds_when_near_point_exists(self, rng):
        points, idx = small_index(rng, n=250, d=32, r=3)
        for qi in range(60):
            base = points[int(rng.integers(250))]
            flips = rng.choice(32, size=int(rng.integers(0, 4)), replace=False)
            y = base ^ BitVector.from_positions(flips.tolist(), 32)
            out = idx.query_near(y)
            # a point within r exists, so an answer below c*r is guaranteed
            assert out.result is not None
            gid, dist = out.result
            assert dist < 2.0 * 3
            assert hamming_distance(points[gid], y) == dist

    def test_none_certifies_empty_ball(self, rng):
        points, idx = small_index(rng, n=50, d=64, r=3)
        none_seen = 0
        for _ in range(40):
            y = BitVector.random(64, rng)
            out = idx.query_near(y)
            if out.result is None:
                none_seen += 1
                assert min(points.distances_from(y)) > 3
        assert none_seen > 0  # sparse data: some queries must come up empty

    def test_factor_must_exceed_one(self, rng):
        points, idx = small_index(rng)
        with pytest.raises(ValueError):
            idx.query_near(points[0], c=1.0)

    def test_tighter_factor_overrides_build_factor(self, rng):
        points, idx = small_index(rng, n=100, d=32, r=3)
        y = points[5]
        out = idx.query_near(y, c=1.001)
        assert out.result is not None
        assert out.result[1] < 1.001 * 3

    def test_early_exit_stops_counting(self, rng):
        points, idx = small_index(rng, n=300, d=16, r=3)
        y = points[0]  # distance 0 hit sits in the very first bucket
        out = idx.query_near(y)
        assert out.result[1] == 0
        assert out.masks_evaluated <= idx.mask_count


class TestCounters:
    def test_outcome_counters_consistent(self, rng):
        points, idx = small_index(rng, n=300, d=16, r=3)
        y = BitVector.random(16, rng)
        out = idx.query_all_within(y)
        assert out.masks_evaluated == 15
        # inspected counts duplicates, verification counts unique candidates
        assert out.candidates_inspected >= out.distance_computations
        assert out.distance_computations >= len(out.matches)

    def test_stats_accumulate_and_reset(self, rng):
        points, idx = small_index(rng)
        idx.stats.reset()
        for i in range(5):
            idx.query_all_within(points[i])
        assert idx.stats.queries == 5
        assert idx.stats.masks_evaluated == 5 * 15
        assert idx.stats.candidates_inspected >= idx.stats.distance_computations >= 5
        snap = idx.stats.as_dict()
        assert set(snap) == {"queries", "masks_evaluated", "candidates_inspected", "distance_computations"}
        idx.stats.reset()
        assert idx.stats.queries == 0 and idx.stats.masks_evaluated == 0

    def test_self_query_inspects_own_bucket(self, rng):
        points, idx = small_index(rng, n=64, d=24, r=2)
        out = idx.query_all_within(points[7])
        # the point collides with itself under every mask
        assert out.candidates_inspected >= idx.mask_count


class TestDigestSafety:
    def test_degenerate_digest_keeps_answers_exact(self, rng, monkeypatch):
        # collapse every digest: all buckets merge, answers must not change
        points = PointSet.random(120, 16, rng)
        reference = build_index(points, r=2, c=2.0, seed=3, kind="basic")
        queries = [BitVector.random(16, rng) for _ in range(15)]
        want = [reference.query_all_within(y).matches for y in queries]

        def flat_digest(matrix, mask, salt):
            zeros = np.zeros(matrix.shape[0], dtype=np.uint64)
            return zeros, zeros.copy()

        monkeypatch.setattr(kernels, "masked_digest_rows", flat_digest)
        merged = build_index(points, r=2, c=2.0, seed=3, kind="basic")
        for y, expected in zip(queries, want):
            out = merged.query_all_within(y)
            assert out.matches == expected
            # every probe now pops the whole table
            assert out.candidates_inspected == out.masks_evaluated * len(points)


class TestBucketMembership:
    def test_probe_agrees_with_mask_collision(self, rng):
        points, idx = small_index(rng, n=80, d=24, r=2, seed=11)
        part = idx.parts[0]
        fam = part.family
        for _ in range(10):
            y = BitVector.random(24, rng)
            for h in range(len(fam)):
                got = sorted(int(g) for g in part.probe(h, y.words))
                mask = fam.mask(h)
                want = [
                    i for i in range(len(points))
                    if ((points[i] ^ y) & mask).weight() == 0
                ]
                assert got == want

    def test_point_always_in_own_bucket(self, rng):
        points, idx = small_index(rng, n=60, d=16, r=2)
        part = idx.parts[0]
        for i in range(len(points)):
            for h in range(len(part.family)):
                assert i in part.probe(h, points[i].words)


class TestEdgeSizes:
    def test_empty_dataset(self, rng):
        points = PointSet.empty(16)
        idx = build_index(points, r=2, c=2.0, seed=1, kind="basic")
        y = BitVector.random(16, rng)
        out = idx.query_all_within(y)
        assert out.result is None and out.matches == ()
        assert idx.query_near(y).result is None
        loaded = index_from_bytes(index_to_bytes(idx))
        assert len(loaded) == 0
        assert loaded.query_all_within(y).matches == ()

    def test_single_point(self, rng):
        points = PointSet.from_vectors([BitVector.from_hex("ab", 8)])
        idx = build_index(points, r=1, c=2.0, seed=1, kind="basic")
        assert idx.mask_count == 3
        assert idx.parts[0].key_id.shape == (3, 1)
        out = idx.query_all_within(points[0])
        assert out.matches == ((0, 0),)
        y = points[0] ^ BitVector.from_positions([4], 8)
        assert idx.query_all_within(y).matches == ((0, 1),)

    def test_duplicate_points_all_reported(self, rng):
        v = BitVector.random(16, rng)
        points = PointSet.from_vectors([v, v, v])
        idx = build_index(points, r=1, c=2.0, seed=2, kind="basic")
        out = idx.query_all_within(v)
        assert out.matches == ((0, 0), (1, 0), (2, 0))


class TestParitySplit:
    def test_points_partitioned_by_weight_parity(self, rng):
        points = PointSet.random(300, 32, rng)
        idx = build_index(points, r=4, c=2.0, seed=9, kind="basic", parity_split=True)
        assert idx.parity_split and len(idx.parts) == 2
        even, odd = idx.parts
        weights = points.weights()
        assert np.array_equal(np.sort(even.ids), np.flatnonzero(weights % 2 == 0))
        assert np.array_equal(np.sort(odd.ids), np.flatnonzero(weights % 2 == 1))

    def test_mask_budget_uses_reduced_radius(self, rng):
        points = PointSet.random(300, 32, rng)
        idx = build_index(points, r=4, c=2.0, seed=9, kind="basic", parity_split=True)
        # matching-parity half searches radius 4, the other radius 3
        out = idx.query_all_within(points[0])
        assert out.masks_evaluated == (2 ** 5 - 1) + (2 ** 4 - 1)

    def test_answers_match_unsplit_and_oracle(self, rng):
        points = PointSet.random(400, 32, rng)
        split = build_index(points, r=4, c=2.0, seed=5, kind="basic", parity_split=True)
        plain = build_index(points, r=4, c=2.0, seed=5, kind="basic")
        for _ in range(40):
            y = points[int(rng.integers(400))] ^ BitVector.from_positions(
                rng.choice(32, size=int(rng.integers(0, 5)), replace=False).tolist(), 32
            )
            want = oracle_within(points, y, 4)
            assert list(split.query_all_within(y).matches) == want
            assert list(plain.query_all_within(y).matches) == want

    def test_radius_zero_skips_mismatched_half(self, rng):
        points = PointSet.random(100, 16, rng)
        idx = build_index(points, r=2, c=2.0, seed=4, kind="basic", parity_split=True)
        y = points[0]
        out = idx.query_all_within(y, radius=0)
        # only the half sharing the query's parity can hold distance-0 points
        assert out.masks_evaluated == 1
        assert list(out.matches) == oracle_within(points, y, 0)


class TestReplication:
    def make_replicated(self, rng, n=200, d=24, r=2):
        eff = FamilyParams("prime", d * 2, r * 2, p=3)
        choice = make_choice(eff, n, d, r, 2.0, replication=2, label="A3")
        points = PointSet.random(n, d, rng)
        return points, build_index(points, choice, seed=6)

    def test_queries_stay_in_original_space(self, rng):
        points, idx = self.make_replicated(rng)
        assert idx.replication == 2
        assert idx.params.d == 48 and idx.dims == 24
        for _ in range(30):
            y = points[int(rng.integers(len(points)))] ^ BitVector.from_positions(
                rng.choice(24, size=int(rng.integers(0, 3)), replace=False).tolist(), 24
            )
            out = idx.query_all_within(y)
            assert list(out.matches) == oracle_within(points, y, 2)

    def test_replicated_roundtrip(self, rng):
        points, idx = self.make_replicated(rng, n=60)
        loaded = index_from_bytes(index_to_bytes(idx))
        assert loaded.replication == 2
        y = BitVector.random(24, rng)
        assert loaded.query_all_within(y).matches == idx.query_all_within(y).matches


class TestSerialization:
    def test_same_seed_same_bytes(self, rng):
        points = PointSet.random(100, 32, rng)
        a = build_index(points, r=3, c=2.0, seed=123, kind="basic")
        b = build_index(points, r=3, c=2.0, seed=123, kind="basic")
        assert index_to_bytes(a) == index_to_bytes(b)

    def test_different_seed_different_bytes(self, rng):
        points = PointSet.random(100, 32, rng)
        a = build_index(points, r=3, c=2.0, seed=1, kind="basic")
        b = build_index(points, r=3, c=2.0, seed=2, kind="basic")
        assert index_to_bytes(a) != index_to_bytes(b)

    def test_roundtrip_preserves_everything(self, rng):
        points = PointSet.random(150, 32, rng)
        idx = build_index(points, r=3, c=2.5, seed=77, kind="basic", parity_split=True)
        data = index_to_bytes(idx)
        loaded = index_from_bytes(data)
        assert loaded.r == 3 and loaded.c == 2.5 and loaded.seed == 77
        assert loaded.parity_split and loaded.replication == 1
        assert len(loaded) == 150 and loaded.dims == 32
        for _ in range(20):
            y = BitVector.random(32, rng)
            a, b = idx.query_all_within(y), loaded.query_all_within(y)
            assert a.matches == b.matches
            assert a.masks_evaluated == b.masks_evaluated
            assert a.candidates_inspected == b.candidates_inspected
        # the loaded bytes are canonical: serializing again is the identity
        assert index_to_bytes(loaded) == data

    def test_loaded_families_still_covering(self, rng):
        points = PointSet.random(80, 24, rng)
        idx = build_index(points, r=3, c=2.0, seed=13, kind="basic", parity_split=True)
        loaded = index_from_bytes(index_to_bytes(idx))
        for part in loaded.parts:
            assert is_r_covering(part.family, 3).is_covering

    def test_file_roundtrip(self, tmp_path, rng):
        points = PointSet.random(40, 16, rng)
        idx = build_index(points, r=2, c=2.0, seed=5, kind="basic")
        path = tmp_path / "small.clshi"
        save_index(idx, path)
        loaded = load_index(path)
        assert index_to_bytes(loaded) == index_to_bytes(idx)
        with open(path, "rb") as fh:
            assert load_index(fh).r == 2

    def test_unseeded_index_roundtrips_none(self, rng):
        points = PointSet.random(20, 16, rng)
        idx = build_index(points, r=2, c=2.0, kind="basic")
        loaded = index_from_bytes(index_to_bytes(idx))
        assert loaded.seed is None


class TestCorruption:
    def make_bytes(self, rng, **kw):
        points = PointSet.random(50, 16, rng)
        idx = build_index(points, r=2, c=2.0, seed=21, kind="basic", **kw)
        return idx, index_to_bytes(idx)

    def test_bad_magic(self, rng):
        _, data = self.make_bytes(rng)
        with pytest.raises(BadMagicError):
            index_from_bytes(b"XXXXXX" + data[6:])

    def test_truncated(self, rng):
        _, data = self.make_bytes(rng)
        with pytest.raises(TruncatedPayloadError):
            index_from_bytes(data[:-5])
        with pytest.raises(TruncatedPayloadError):
            index_from_bytes(data[:10])

    def test_trailing(self, rng):
        _, data = self.make_bytes(rng)
        with pytest.raises(TrailingDataError):
            index_from_bytes(data + b"\x00")

    def test_unsupported_version(self, rng):
        _, data = self.make_bytes(rng)
        mangled = data[:6] + struct.pack("<H", 9) + data[8:]
        with pytest.raises(InvalidHeaderError):
            index_from_bytes(mangled)

    def test_digest_section_checksum(self, rng):
        idx, data = self.make_bytes(rng)
        meta = sum(
            len(family_to_bytes(p.family)) + 8 + 4 * p.ids.shape[0] for p in idx.parts
        )
        pos = _header_size() + meta  # first byte of the digest tables
        mangled = data[:pos] + bytes([data[pos] ^ 0xFF]) + data[pos + 1 :]
        with pytest.raises(ClshFormatError, match="corrupt digest section"):
            index_from_bytes(mangled)

    def test_metadata_checksum(self, rng):
        idx, data = self.make_bytes(rng)
        fam_len = len(family_to_bytes(idx.parts[0].family))
        pos = _header_size() + fam_len + 8  # first id of the first part
        mangled = data[:pos] + bytes([data[pos] ^ 0xFF]) + data[pos + 1 :]
        with pytest.raises(ClshFormatError, match="corrupt index metadata"):
            index_from_bytes(mangled)


def _header_size() -> int:
    return struct.calcsize("<6sHBBQQQQdQII")
