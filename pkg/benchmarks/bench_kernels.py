"""Compare the NumPy and compiled kernel backends on the hot paths.

Every operation is checked for bit-exact agreement before timing, then timed
best-of-N on identical inputs.  The final section builds and queries a real
index under each backend so the end-to-end effect is visible, not just the
microbenchmarks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --n 200000 --d 256 --repeats 7
"""

import argparse
import time

import numpy as np

from clsh import kernels
from clsh.bits import PointSet
from clsh.harness import gen_random
from clsh.index import build_index


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def check_equal(name: str, a, b) -> None:
    if isinstance(a, tuple):
        for i, (x, y) in enumerate(zip(a, b)):
            assert np.array_equal(x, y), f"{name} lane {i} differs between backends"
    elif isinstance(a, np.ndarray):
        assert np.array_equal(a, b), f"{name} differs between backends"
    else:
        assert a == b, f"{name} differs between backends"


def kernel_cases(n: int, d: int, rng: np.random.Generator):
    words = (d + 63) // 64
    mat = rng.integers(0, 1 << 63, size=(n, words), dtype=np.uint64)
    vec = rng.integers(0, 1 << 63, size=words, dtype=np.uint64)
    masks = rng.integers(0, 1 << 63, size=(512, words), dtype=np.uint64)
    zmat = rng.integers(0, 1 << 63, size=(4096, words), dtype=np.uint64)
    flat = rng.integers(0, 1 << 63, size=n, dtype=np.uint64)
    return [
        ("popcount_u64", lambda k: k.popcount_u64(flat)),
        ("weight_rows", lambda k: k.weight_rows(mat)),
        ("distances_to", lambda k: k.distances_to(mat, vec)),
        ("collide_rows", lambda k: k.collide_rows(mat, vec)),
        ("count_collisions", lambda k: k.count_collisions(zmat, masks)),
        ("digest_rows", lambda k: k.digest_rows(mat, 12345)),
        ("masked_digest_rows", lambda k: k.masked_digest_rows(mat, vec, 12345)),
    ]


def run_micro(n: int, d: int, repeats: int) -> None:
    backends = kernels.available_backends()
    rng = np.random.default_rng(0xBE9C)
    print(f"kernel microbenchmarks: n={n} d={d} best of {repeats}")
    print(f"{'operation':<22}" + "".join(f"{name:>14}" for name in backends) + "   speedup")
    for name, call in kernel_cases(n, d, rng):
        results = {b: call(impl) for b, impl in backends.items()}
        first = next(iter(results.values()))
        for other in results.values():
            check_equal(name, first, other)
        times = {b: best_of(lambda impl=impl: call(impl), repeats) for b, impl in backends.items()}
        row = f"{name:<22}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends)
        if len(times) == 2:
            py, cy = times["python"], times["cython"]
            row += f"   {py / cy:>6.2f}x"
        print(row)


def run_macro(n: int, d: int, radius: int, queries: int) -> None:
    print(f"\nend-to-end: build + {queries} queries at n={n} d={d} r={radius}")
    rng = np.random.default_rng(0xE57)
    points = gen_random(n, d, rng)
    query_set = gen_random(queries, d, rng)
    previous = kernels.BACKEND
    try:
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            start = time.perf_counter()
            idx = build_index(points, r=radius, c=2.0, seed=9, kind="basic")
            built = time.perf_counter() - start
            start = time.perf_counter()
            hits = sum(len(idx.query_all_within(q).matches) for q in query_set)
            queried = time.perf_counter() - start
            print(f"  {backend:<8} build {built:6.3f}s   "
                  f"queries {queried:6.3f}s ({queries / queried:,.0f}/s)   hits {hits}")
    finally:
        kernels.use_backend(previous)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=100_000, help="rows for the microbenchmarks")
    parser.add_argument("--d", type=int, default=128, help="dimensions")
    parser.add_argument("--repeats", type=int, default=5, help="best-of repetitions")
    parser.add_argument("--index-n", type=int, default=20_000, help="points for the index run")
    parser.add_argument("--radius", type=int, default=4, help="index search radius")
    parser.add_argument("--queries", type=int, default=200, help="index queries to time")
    args = parser.parse_args()

    names = ", ".join(kernels.available_backends())
    print(f"available backends: {names}\n")
    run_micro(args.n, args.d, args.repeats)
    run_macro(args.index_n, args.d, args.radius, args.queries)


if __name__ == "__main__":
    main()
