"""Command line driver: generate, solve, verify, benchmark.

Instance files are plain text: a header "n d", then n lines of d
coordinates followed by the supply.  Map files hold "i j amount" lines
(0-based original point indices) and a trailing "# cost <value>" comment;
amounts print with 17 significant digits so files round-trip bit-exactly.

Exit codes: 0 ok, 1 usage, 2 parse failure, 3 infeasible or diagnostic.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .core import (
    GeoTransportError,
    ParseError,
    SolverDiagnosticError,
    TransportInstance,
    TransportMap,
    UnsupportedInstanceError,
    make_instance,
    total_cost,
    validate_map,
)
from .oracle import OracleLimits, exact_emd
from .pipeline import solve_transport

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3


def read_instance(path: str) -> TransportInstance:
    try:
        with open(path) as fh:
            tokens = fh.read().split()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}")
    if len(tokens) < 2:
        raise ParseError("instance file needs an 'n d' header")
    try:
        n, d = int(tokens[0]), int(tokens[1])
        body = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise ParseError(f"bad number in {path}: {exc}")
    if len(body) != n * (d + 1):
        raise ParseError(
            f"expected {n * (d + 1)} values after the header, got {len(body)}"
        )
    rows = np.array(body).reshape(n, d + 1)
    try:
        return make_instance(rows[:, :d], rows[:, d])
    except UnsupportedInstanceError as exc:
        raise ParseError(str(exc))


def write_instance(path: str, points, supplies):
    points = np.asarray(points)
    n, d = points.shape
    lines = [f"{n} {d}"]
    for row, mu in zip(points, supplies):
        coords = " ".join(f"{x:.17g}" for x in row)
        lines.append(f"{coords} {mu:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def format_map(tmap: TransportMap, cost: float) -> str:
    lines = [f"{i} {j} {amount:.17g}" for (i, j), amount in tmap.as_sorted_items()
             if amount > 0]
    lines.append(f"# cost {cost:.17g}")
    return "\n".join(lines) + "\n"


def read_map(path: str) -> TransportMap:
    entries = {}
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ParseError(f"bad map line: {line!r}")
                entries[(int(parts[0]), int(parts[1]))] = float(parts[2])
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}")
    except ValueError as exc:
        raise ParseError(f"bad number in {path}: {exc}")
    return TransportMap(entries)


def externalize_map(tmap: TransportMap, instance: TransportInstance) -> TransportMap:
    """Instance-row indices -> original input-file indices."""
    src = instance.source_index
    return TransportMap(
        {(int(src[i]), int(src[j])): v for (i, j), v in tmap.entries.items()}
    )


def internalize_map(tmap: TransportMap, instance: TransportInstance) -> TransportMap:
    """Original input-file indices -> instance rows (coincident rows merge)."""
    back = instance.merged_from
    entries = {}
    for (i, j), v in tmap.entries.items():
        if not (0 <= i < len(back) and 0 <= j < len(back)):
            raise ParseError(f"map references point {max(i, j)} outside the instance")
        key = (int(back[i]), int(back[j]))
        entries[key] = entries.get(key, 0.0) + v
    return TransportMap(entries)


def cmd_solve(args) -> int:
    instance = read_instance(args.input)
    result = solve_transport(instance, args.epsilon, mode=args.mode)
    text = format_map(externalize_map(result.tmap, instance), result.cost)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    s = result.stats
    print(
        f"cost {result.cost:.17g}\n"
        f"mode {s.mode}  eps_effective {s.eps_effective:g}  "
        f"cells {s.n_cells}  edges {s.n_edges}  instances {s.n_instances}  "
        f"contractions {s.n_contractions}\n"
        f"wall_time {s.wall_time:.3f}s",
        file=sys.stderr,
    )
    return EXIT_OK


def generate_instance(n, d, spread, seed, integer_supplies=False):
    """Reproducible balanced instance with approximately the asked spread."""
    if n < 2:
        raise GeoTransportError("need at least two points")
    rng = np.random.default_rng(seed)
    side = max(2, int(round(n ** (1.0 / d))))
    grid = []
    for idx in range(n):
        coord = []
        rem = idx
        for _ in range(d):
            coord.append(rem % side)
            rem //= side
        grid.append(coord)
    pts = np.array(grid, dtype=float)
    pts += (rng.random((n, d)) - 0.5) * 0.5
    base_spread = _spread_of(pts)
    if spread is not None:
        if spread < base_spread / 3:
            raise GeoTransportError(
                f"spread {spread:g} is below what {n} points allow (~{base_spread:.3g})"
            )
        if spread > base_spread:
            # shrink one pair until the smallest gap matches the request
            span = pts.max(axis=0) - pts.min(axis=0)
            diam = float(np.sqrt((span * span).sum()))
            partner = pts[0] + (pts[1] - pts[0]) * (diam / spread) / max(
                1e-300, float(np.linalg.norm(pts[1] - pts[0]))
            )
            pts[1] = partner
    if integer_supplies:
        mu = rng.integers(-9, 10, n).astype(float)
        mu[-1] -= mu.sum()
    else:
        mu = rng.normal(size=n)
        mu -= mu.mean()
        mu[-1] -= mu.sum()
    return pts, mu


def _spread_of(pts):
    from scipy.spatial import cKDTree

    span = pts.max(axis=0) - pts.min(axis=0)
    diam = float(np.sqrt((span * span).sum()))
    dist, _ = cKDTree(pts).query(pts, k=2)
    return diam / max(float(dist[:, 1].min()), 1e-300)


def cmd_gen(args) -> int:
    pts, mu = generate_instance(args.n, args.d, args.spread, args.seed,
                                args.integer_supplies)
    write_instance(args.output, pts, mu)
    print(f"wrote {args.n} points (d={args.d}) to {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    instance = read_instance(args.input)
    tmap = internalize_map(read_map(args.map), instance)
    violations = validate_map(instance, tmap)
    cost = total_cost(instance, tmap)
    print(f"map cost {cost:.17g}")
    if violations:
        print(f"INFEASIBLE: {len(violations)} violations")
        for v in violations[:20]:
            print(f"  {v}")
        return EXIT_INFEASIBLE
    print("feasible: all row/column sums match within tolerance")
    limits = OracleLimits(max_points=args.oracle_limit,
                          max_edges=OracleLimits().max_edges)
    if instance.n > limits.max_points:
        print(f"oracle skipped: {instance.n} points exceed limit {limits.max_points}")
        return EXIT_OK
    opt, _ = exact_emd(instance, limits)
    ratio = cost / opt if opt > 0 else 1.0
    print(f"oracle cost {opt:.17g}")
    print(f"ratio {ratio:.12g}")
    return EXIT_OK


def _bench_one(task):
    n, d, eps, mode, seed, oracle_limit = task
    pts, mu = generate_instance(n, d, None, seed)
    instance = make_instance(pts, mu)
    t0 = time.perf_counter()
    result = solve_transport(instance, eps, mode=mode)
    wall = time.perf_counter() - t0
    ratio = ""
    if n <= oracle_limit:
        opt, _ = exact_emd(instance, OracleLimits(max_points=oracle_limit))
        if opt > 0:
            ratio = f"{result.cost / opt:.6f}"
    return {
        "n": n,
        "d": d,
        "epsilon": eps,
        "mode": result.stats.mode,
        "wall_time_s": f"{wall:.4f}",
        "cells": result.stats.n_cells,
        "edges": result.stats.n_edges,
        "ratio": ratio,
    }


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else \
        [1000, 2000, 4000, 8000, 16000, 32000, 64000, 100000]
    tasks = [
        (n, args.d, args.epsilon, args.mode, args.seed + i, args.oracle_limit)
        for i, n in enumerate(sizes)
    ]
    threads = int(os.environ.get("GTS_THREADS", "1"))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_bench_one, tasks))
    else:
        rows = [_bench_one(t) for t in tasks]
    cols = ["n", "d", "epsilon", "mode", "wall_time_s", "cells", "edges", "ratio"]
    out = [",".join(cols)]
    for row in rows:
        out.append(",".join(str(row[c]) for c in cols))
    text = "\n".join(out) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geotransport",
        description="(1+eps)-approximate geometric transportation solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve an instance file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--mode", default="auto",
                   choices=["auto", "warped", "low-spread", "matching"])
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gen", help="generate a reproducible instance")
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--spread", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--integer-supplies", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="check a map against its instance")
    p.add_argument("--input", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--oracle-limit", type=int, default=500)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="size ladder timing table (CSV)")
    p.add_argument("--sizes", default=None,
                   help="comma separated n values (default: 1000..100000 ladder)")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--mode", default="low-spread",
                   choices=["auto", "warped", "low-spread", "matching"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-limit", type=int, default=500)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverDiagnosticError as exc:
        print(f"solver diagnostic: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UnsupportedInstanceError, GeoTransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
