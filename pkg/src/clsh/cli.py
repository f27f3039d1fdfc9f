"""Command-line surface: build, query, verify, experiment, bench, gen.

Every run prints a '#' reproducibility header carrying the effective seed
and the full parameter set.  The seed comes from --seed, falling back to
the CLSH_SEED environment variable, falling back to OS entropy (in which
case the chosen value is still echoed, so any run can be replayed).

Exit codes: 0 ok / result found, 1 no result, 2 bad input, 3 requested
scheme infeasible, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .baseline import build_classical, classical_tuning
from .bits import (
    BitVector,
    ClshFormatError,
    DimensionMismatchError,
    PointSet,
    read_points,
    write_points,
)
from .families import (
    FamilyParams,
    SchemeInfeasibleError,
    build_family,
    family_weight,
    is_r_covering,
    overhead_estimate,
    read_family,
    select_scheme,
    write_family,
)
from .harness import (
    EXPERIMENT_KINDS,
    ExperimentSpec,
    gen_random,
    gen_worst_case,
    plant_near,
    run_experiment,
)
from .index import (
    MAGIC_INDEX,
    build_index,
    build_index_from_family,
    load_index,
    save_index,
)

EXIT_OK = 0
EXIT_NOT_FOUND = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_seed(value: int | None) -> tuple[int, str]:
    if value is not None:
        return value & ((1 << 64) - 1), "--seed"
    env = os.environ.get("CLSH_SEED")
    if env:
        return int(env, 0) & ((1 << 64) - 1), "CLSH_SEED"
    return int.from_bytes(os.urandom(8), "little"), "entropy"


def _echo_header(args: argparse.Namespace, seed: int, source: str) -> None:
    shown = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func", "command", "seed") and v is not None
    }
    pairs = " ".join(f"{k.replace('_', '-')}={v}" for k, v in shown.items())
    print(f"# clsh {args.command} seed={seed} seed-source={source} {pairs}".rstrip())


def _parse_query(value: str, dims: int) -> BitVector:
    if os.path.isfile(value):
        pts = read_points(value)
        if not len(pts):
            raise ValueError(f"query file {value!r} holds no points")
        return pts[0]
    text = value[2:] if value.startswith(("0x", "0X")) else value
    return BitVector.from_hex(text, dims)


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# -- subcommands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    seed, source = _resolve_seed(args.seed)
    _echo_header(args, seed, source)
    rng = np.random.default_rng(seed)
    if args.mode == "random":
        if args.n is None or args.d is None:
            raise ValueError("gen random needs --n and --d")
        pts = gen_random(args.n, args.d, rng)
    elif args.mode == "worst-case":
        if args.n is None or args.d is None or args.radius is None:
            raise ValueError("gen worst-case needs --n, --d and --radius")
        center = (
            _parse_query(args.center, args.d) if args.center else BitVector.random(args.d, rng)
        )
        print(f"center: {center.to_hex()}")
        pts = gen_worst_case(center, args.n, args.radius, rng)
    elif args.mode == "planted":
        if args.input is None or not args.distances:
            raise ValueError("gen planted needs --input and --distances")
        base = read_points(args.input)
        center = (
            _parse_query(args.center, base.dims) if args.center else BitVector.random(base.dims, rng)
        )
        print(f"center: {center.to_hex()}")
        pts, ids = plant_near(base, center, args.distances, rng)
        for pid, dist in zip(ids, args.distances):
            print(f"planted: id={pid} distance={dist}")
    elif args.mode == "family":
        if args.d is None or args.radius is None:
            raise ValueError("gen family needs --d and --radius")
        params = FamilyParams(
            args.kind, args.d, args.radius,
            t=args.t or 1, b=args.b or 1, q=args.q or 1, p=args.p or 2,
            nonzero_m=not args.full_codomain, balanced=args.balanced,
        )
        fam = build_family(params, rng=seed)
        write_family(fam, args.out)
        print(f"masks: {len(fam)}")
        print(f"min-weight: {family_weight(fam)}")
        print(f"wrote: {args.out}")
        return EXIT_OK
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown gen mode {args.mode!r}")
    write_points(pts, args.out)
    print(f"points: {len(pts)} dims: {pts.dims}")
    print(f"wrote: {args.out}")
    return EXIT_OK


def cmd_build(args) -> int:
    seed, source = _resolve_seed(args.seed)
    _echo_header(args, seed, source)
    points = read_points(args.input)
    if args.scheme == "classical":
        if (args.k is None) != (args.tables is None):
            raise ValueError("classical tuning needs --k and --tables together (or neither)")
        if args.k is not None:
            k, count = args.k, args.tables
        else:
            k, count = classical_tuning(max(len(points), 2), points.dims, args.radius, args.approx)
        fam = build_classical(points.dims, k, count, r=args.radius, rng=seed)
        index = build_index_from_family(points, fam, args.approx, r=args.radius, seed=seed)
        print(f"scheme: classical k={k} tables={count} (no recall guarantee)")
        print(f"masks: {count}")
    else:
        index = build_index(
            points,
            r=args.radius,
            c=args.approx,
            seed=seed,
            parity_split=args.parity_split,
            kind=args.scheme,
            t=args.t,
            b=args.b,
            q=args.q,
            p=args.p,
            nonzero_m=not args.full_codomain,
        )
        choice = index.scheme
        prm = choice.params
        print(
            f"scheme: {choice.label} kind={prm.kind} d={prm.d} r={prm.r}"
            f" t={prm.t} b={prm.b} q={prm.q} p={prm.p} replication={choice.replication}"
        )
        print(f"masks: {index.mask_count}")
        print(f"predicted-collisions: {choice.kappa:.6g}")
        print(f"overhead: {overhead_estimate(choice):.6g} ({choice.overhead_class})")
    save_index(index, args.out)
    print(f"indexed-points: {len(points)}")
    print(f"wrote: {args.out}")
    return EXIT_OK


def cmd_query(args) -> int:
    seed, source = _resolve_seed(args.seed)
    _echo_header(args, seed, source)
    index = load_index(args.index)
    y = _parse_query(args.query, index.dims)
    if args.exact and args.mode == "near":
        raise ValueError("--exact applies to nn (near is approximate by definition)")
    factor = args.approx if args.approx is not None else None
    if args.mode == "all":
        out = index.query_all_within(y, args.radius)
        for pid, dist in out.matches:
            print(f"match: id={pid} distance={dist}")
        found = bool(out.matches)
    elif args.mode == "near":
        out = index.query_near(y, radius=args.radius, c=factor)
        found = out.result is not None
    else:  # nn
        out = index.nearest_neighbor(y, c=None if args.exact or factor is None else factor)
        found = out.result is not None
    if out.result is not None:
        print(f"id: {out.result[0]}")
        print(f"distance: {out.result[1]}")
    else:
        print("no result")
    print(
        f"counters: masks_evaluated={out.masks_evaluated}"
        f" candidates_inspected={out.candidates_inspected}"
        f" distance_computations={out.distance_computations}"
    )
    return EXIT_OK if found else EXIT_NOT_FOUND


def cmd_verify(args) -> int:
    seed, source = _resolve_seed(args.seed)
    _echo_header(args, seed, source)
    with open(args.family, "rb") as fh:
        magic = fh.read(6)
    if magic == MAGIC_INDEX:
        families = [part.family for part in load_index(args.family).parts]
    else:
        families = [read_family(args.family)]
    radius = args.radius if args.radius is not None else families[0].params.r
    ok = True
    for i, fam in enumerate(families):
        verdict = is_r_covering(fam, radius, budget=args.budget)
        label = f"part {i}: " if len(families) > 1 else ""
        print(f"{label}covering: {'true' if verdict.is_covering else 'false'}")
        print(f"{label}patterns-checked: {verdict.patterns_checked}")
        if not verdict.is_covering:
            ok = False
            if verdict.witness is not None:
                wit = verdict.witness
                print(f"{label}witness: {wit.to_hex()} (weight {wit.weight()})")
    return EXIT_OK if ok else EXIT_NOT_FOUND


def cmd_experiment(args) -> int:
    seed, source = _resolve_seed(args.seed)
    grid = json.loads(args.grid) if args.grid else {}
    if not isinstance(grid, dict):
        raise ValueError("--grid must be a JSON object")
    spec = ExperimentSpec(
        args.kind,
        grid,
        trials=args.trials,
        seed=seed,
        out=args.out,
        fmt=args.format,
        budget=args.budget,
    )
    text = run_experiment(spec)
    if args.out:
        _echo_header(args, seed, source)
        print(f"wrote: {args.out}")
    else:
        # the rendered text carries its own reproducibility comments
        sys.stdout.write(text)
    return EXIT_OK


def _histogram(values: list[int], buckets: int = 8) -> str:
    if not values:
        return "(no data)"
    lo, hi = min(values), max(values)
    if lo == hi:
        return f"[{lo}]x{len(values)}"
    edges = [lo + (hi - lo) * i / buckets for i in range(buckets + 1)]
    counts = [0] * buckets
    for v in values:
        slot = min(int((v - lo) / (hi - lo) * buckets), buckets - 1)
        counts[slot] += 1
    cells = " ".join(
        f"[{edges[i]:.0f},{edges[i + 1]:.0f}):{counts[i]}" for i in range(buckets)
    )
    return cells


def cmd_bench(args) -> int:
    from . import kernels

    seed, source = _resolve_seed(args.seed)
    _echo_header(args, seed, source)
    available = sorted(kernels.available_backends())
    if args.backend == "both":
        backends = available
    elif args.backend == "auto":
        backends = [kernels.BACKEND]
    else:
        if args.backend not in available:
            raise ValueError(f"kernel backend {args.backend!r} not available")
        backends = [args.backend]
    previous = kernels.BACKEND
    try:
        for backend in backends:
            kernels.use_backend(backend)
            rng = np.random.default_rng(seed)
            points = gen_random(args.n, args.d, rng)
            t0 = time.perf_counter()
            index = build_index(points, r=args.radius, c=args.approx, seed=seed)
            build_s = time.perf_counter() - t0
            queries = [BitVector.random(args.d, rng) for _ in range(args.queries)]
            t0 = time.perf_counter()
            outcomes = [index.query_all_within(y) for y in queries]
            query_s = time.perf_counter() - t0
            qps = args.queries / query_s if query_s > 0 else float("inf")
            print(f"backend: {backend}")
            print(f"  build: {build_s:.3f}s for n={args.n} masks={index.mask_count}")
            print(f"  queries/sec: {qps:.6g} ({args.queries} queries)")
            for name in ("masks_evaluated", "candidates_inspected", "distance_computations"):
                vals = [getattr(o, name) for o in outcomes]
                print(
                    f"  {name}: mean {sum(vals) / len(vals):.6g}"
                    f" histogram {_histogram(vals)}"
                )
    finally:
        kernels.use_backend(previous)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="clsh",
        description=(
            "Hamming-space similarity search with structurally guaranteed recall:"
            " build indexes, query them, verify mask families, and run experiments."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default: CLSH_SEED env var, else OS entropy)")

    p = sub.add_parser("gen", help="generate datasets (CLSH1) or mask families (CLSHA)")
    p.add_argument("--mode", choices=("random", "worst-case", "planted", "family"), required=True)
    p.add_argument("--n", type=int, help="number of points")
    p.add_argument("--d", type=int, help="dimension in bits")
    p.add_argument("--radius", "-r", type=int, help="radius parameter")
    p.add_argument("--input", help="base CLSH1 set for planted mode")
    p.add_argument("--distances", type=_int_list, default=[],
                   help="comma-separated planted distances")
    p.add_argument("--center", help="query center: CLSH1 file or hex (default: random)")
    p.add_argument("--kind", choices=("basic", "partitioned", "prime"), default="basic",
                   help="family kind for family mode")
    p.add_argument("-t", type=int, help="vectors per dimension (partitioned)")
    p.add_argument("-b", type=int, help="partition count (partitioned)")
    p.add_argument("-q", type=int, help="memberships per dimension (partitioned)")
    p.add_argument("-p", type=int, help="prime modulus (prime kind)")
    p.add_argument("--full-codomain", action="store_true",
                   help="basic kind: allow zero mapping values")
    p.add_argument("--balanced", action="store_true",
                   help="use the balanced mapping distribution")
    p.add_argument("--out", required=True, help="output path")
    add_seed(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build a CLSHI index from a CLSH1 point set")
    p.add_argument("--input", required=True, help="CLSH1 point file")
    p.add_argument("--radius", "-r", type=int, required=True, help="guaranteed search radius")
    p.add_argument("--approx", "-c", type=float, default=2.0,
                   help="approximation factor c > 1 (default 2)")
    p.add_argument("--scheme", choices=("auto", "basic", "partitioned", "prime", "classical"),
                   default="auto", help="family construction (default: auto-select)")
    p.add_argument("--parity-split", action="store_true",
                   help="split points by weight parity to halve near-threshold collisions")
    p.add_argument("-t", type=int, help="force vectors per dimension")
    p.add_argument("-b", type=int, help="force partition count")
    p.add_argument("-q", type=int, help="force memberships per dimension")
    p.add_argument("-p", type=int, help="force prime modulus")
    p.add_argument("--k", type=int, help="classical: samples per mask")
    p.add_argument("--tables", type=int, help="classical: number of masks")
    p.add_argument("--full-codomain", action="store_true",
                   help="basic kind: allow zero mapping values")
    p.add_argument("--out", required=True, help="output CLSHI path")
    add_seed(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="query a CLSHI index")
    p.add_argument("--index", required=True, help="CLSHI index file")
    p.add_argument("--query", required=True, help="query point: CLSH1 file or hex string")
    p.add_argument("--mode", choices=("nn", "near", "all"), default="all",
                   help="nn: nearest neighbor, near: first point within c*r, all: every point within r")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--exact", action="store_true",
                       help="nn: stop only when the answer is provably exact (default)")
    group.add_argument("--approx", type=float, default=None, metavar="C",
                       help="approximation factor override")
    p.add_argument("--radius", type=int, default=None,
                   help="search radius (default: the index's built radius)")
    add_seed(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("verify", help="exhaustively verify the covering property")
    p.add_argument("--family", required=True, help="CLSHA family dump or CLSHI index")
    p.add_argument("--radius", "-r", type=int, default=None,
                   help="radius to verify (default: the family's design radius)")
    p.add_argument("--budget", type=int, default=10**8,
                   help="max patterns to enumerate before giving up")
    add_seed(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="run a reproducible experiment grid")
    p.add_argument("--kind", choices=EXPERIMENT_KINDS, required=True)
    p.add_argument("--grid", help="JSON object of grid parameters")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--budget", type=int, default=4096, help="max grid cells")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json-lines"), default="csv")
    add_seed(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", help="index throughput per kernel backend")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--radius", "-r", type=int, default=6)
    p.add_argument("--approx", "-c", type=float, default=2.0)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--backend", choices=("auto", "python", "cython", "both"), default="auto")
    add_seed(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SchemeInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ClshFormatError, DimensionMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
