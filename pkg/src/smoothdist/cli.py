"""Command-line interface: build, query, grid, verify, bench, demo.

Exit codes: 0 ok, 1 verification failure, 2 invalid input or usage,
3 coverage/solver failure, 4 query outside the polytope.

Coordinates and distances are in the input's original units on both sides of
the CLI; normalization happens only inside the library.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .baseline import SCENARIOS, run_demo
from .blend import evaluate, evaluate_many
from .dag import DagStructure, build_for
from .errors import CoverageFailure, EmptyPatchList, OutsidePolytope, SmoothDistError, SolverFailure
from .polytope import Polytope, sample_interior
from .verify import verify_structure

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_BUILD, EXIT_OUTSIDE = 0, 1, 2, 3, 4

GRID_FIELDS = ("blend", "witness", "exact", "error")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    """Shortest repr that round-trips the double exactly."""
    return repr(float(x))


def _seed(args) -> int:
    env = os.environ.get("SMOOTHDIST_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise CliError(f"SMOOTHDIST_SEED must be an integer, got {env!r}") from None
    return int(args.seed)


def _epsilon(text) -> float:
    try:
        eps = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (0.0 < eps < 0.5):
        raise argparse.ArgumentTypeError(f"epsilon must lie in (0, 1/2), got {text}")
    return eps


def _eps_list(text) -> list[float]:
    out = [_epsilon(t) for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return out


def load_polytope(path) -> Polytope:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Polytope.from_dict(data)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, SmoothDistError) as exc:
        raise CliError(f"invalid polytope in {path}: {type(exc).__name__}: {exc}") from None


def load_structure(path) -> DagStructure:
    try:
        return DagStructure.load(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, SmoothDistError) as exc:
        raise CliError(f"invalid structure file {path}: {type(exc).__name__}: {exc}") from None


def _build(p: Polytope, eps: float, seed: int) -> tuple[DagStructure, float]:
    t0 = time.perf_counter()
    try:
        s = build_for(p, eps, seed=seed)
    except (CoverageFailure, SolverFailure) as exc:
        raise CliError(f"build failed: {type(exc).__name__}: {exc}", EXIT_BUILD) from None
    return s, time.perf_counter() - t0


def _open_out(path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------

def cmd_build(args) -> int:
    p = load_polytope(args.input)
    s, secs = _build(p, args.epsilon, _seed(args))
    try:
        s.save(args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    print(f"level sizes: {' '.join(str(n) for n in s.level_sizes)}")
    print(f"|X_0|: {s.level_sizes[0]}")
    print(f"m: {s.m}")
    print(f"max out-degree: {s.max_out_degree()}")
    print(f"patches: {s.num_patches}")
    print(f"build time: {secs:.3f}s")
    return EXIT_OK


def _point(text: str, dim: int) -> np.ndarray:
    try:
        x = np.array([float(t) for t in text.replace(" ", "").split(",")], dtype=float)
    except ValueError:
        raise CliError(f"cannot parse point {text!r}") from None
    if x.size != dim or not np.all(np.isfinite(x)):
        raise CliError(f"point must have {dim} finite coordinates, got {text!r}")
    return x


def cmd_query(args) -> int:
    s = load_structure(args.structure)
    x = _point(args.at, s.dim)
    try:
        r = evaluate(s, x, original=True)
    except OutsidePolytope:
        raise CliError(f"point {args.at} lies outside the polytope", EXIT_OUTSIDE) from None
    except EmptyPatchList as exc:
        raise CliError(f"query not covered by the structure: {exc}", EXIT_BUILD) from None
    print(f"value: {fmt(r.value)}")
    if args.gradient:
        # y = scale (x + t) and values scale by 1/scale, so the gradient is unchanged
        print(f"gradient: {','.join(fmt(g) for g in r.gradient)}")
    print(f"patches: {len(r.contributions)}")
    print(f"path length: {r.path_length}")
    return EXIT_OK


def grid_points(s: DagStructure, res: int) -> np.ndarray:
    """Cell centers of a res^d grid over the original polytope's bounding box."""
    nlo, nhi = s.polytope.bounding_box()
    lo, hi = s.transform.invert(nlo), s.transform.invert(nhi)
    axes = [lo[i] + (np.arange(res) + 0.5) * (hi[i] - lo[i]) / res for i in range(s.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def cmd_grid(args) -> int:
    s = load_structure(args.structure)
    if args.res < 1:
        raise CliError("--res must be at least 1")
    fh = _open_out(args.out)
    X = grid_points(s, args.res)
    Q = np.array([s.transform.apply(x) for x in X]) if len(X) else X
    val, G, _, npatch, _, wit, st, _ = evaluate_many(s, Q)
    P = s.polytope
    d = (P.b - Q @ P.A.T).min(axis=1)
    to_orig = s.transform.distance_to_original
    inside = st == kernels.STATUS_OK
    with fh:
        w = csv.writer(fh)
        w.writerow([*(f"x{i}" for i in range(s.dim)), "d", "dtilde", "error", "grad_norm", "patches",
                    "field", "cell"])
        for k in range(len(X)):
            coords = [fmt(c) for c in X[k]]
            if not inside[k]:
                cell = "exterior" if st[k] == kernels.STATUS_OUTSIDE else "uncovered"
                w.writerow([*coords, "nan", "nan", "nan", "nan", 0, "nan", cell])
                continue
            dk, vk, wk = float(to_orig(d[k])), float(to_orig(val[k])), float(to_orig(wit[k]))
            field = {"blend": vk, "witness": wk, "exact": dk, "error": vk - dk}[args.field]
            w.writerow([*coords, fmt(dk), fmt(vk), fmt(vk - dk), fmt(np.linalg.norm(G[k])),
                        int(npatch[k]), fmt(field), "interior"])
    n_in = int(inside.sum())
    print(f"wrote {len(X)} rows ({n_in} interior, {len(X) - n_in} exterior) to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    s = load_structure(args.structure)
    rep = verify_structure(s, args.samples, seed=_seed(args), lemma_instances=args.lemmas)
    print(rep.table())
    return EXIT_OK if rep.passed else EXIT_VERIFY


def _slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, dtype=float), np.asarray(y, dtype=float), 1)[0])


def cmd_bench(args) -> int:
    p = load_polytope(args.input)
    seed = _seed(args)
    fh = _open_out(args.out)
    rows = []
    for eps in args.eps_list:
        s, secs = _build(p, eps, seed)
        Q = sample_interior(s.polytope, args.queries, seed + 1)
        pl = evaluate_many(s, Q)[7]
        t0 = time.perf_counter()
        for q in Q:
            evaluate(s, q)
        qt = (time.perf_counter() - t0) / len(Q)
        rows.append({"epsilon": eps, "x0": s.level_sizes[0], "total_nodes": int(sum(s.level_sizes)),
                     "levels": s.m + 1, "mean_path_length": float(pl.mean()),
                     "mean_query_seconds": qt, "build_seconds": secs})
        r = rows[-1]
        print(f"eps {fmt(eps)}: |X_0| {r['x0']}, nodes {r['total_nodes']}, levels {r['levels']}, "
              f"path {r['mean_path_length']:.3f}, query {qt * 1e6:.1f}us, build {secs:.2f}s")
    with fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in r.items()})
    if len(rows) >= 2:
        inv = [math.log(1.0 / r["epsilon"]) for r in rows]
        storage = _slope(inv, [math.log(r["x0"]) for r in rows])
        halvings = [math.log2(1.0 / r["epsilon"]) for r in rows]
        path = _slope(halvings, [r["mean_path_length"] for r in rows])
        print(f"storage slope (log |X_0| vs log 1/eps): {storage:.4f}")
        print(f"path length per halving of eps: {path:.4f}")
    return EXIT_OK


def cmd_demo(args) -> int:
    fh = _open_out(args.out)
    res = run_demo(args.scenario, seed=_seed(args))
    tr = res.structure.transform
    with fh:
        w = csv.writer(fh)
        d = res.witness.points.shape[1]
        w.writerow(["field", "step", *(f"x{i}" for i in range(d)), "value"])
        for trace in (res.witness, res.blended):
            for k, (x, v) in enumerate(zip(trace.points, trace.values)):
                w.writerow([trace.source, k, *(fmt(c) for c in tr.invert(x)),
                            fmt(tr.distance_to_original(v))])
    for label, t in (("witness", res.witness), ("blended", res.blended)):
        extra = f", monotone {'yes' if t.monotone else 'no'}" if label == "blended" else ""
        print(f"{label}: {t.terminated} after {len(t.points) - 1} steps, jitter {t.jitter}{extra}")
    print(f"witness cycled or jittered: {'yes' if res.witness_pathological else 'no'}")
    print(f"blended converged: {'yes' if res.blended_ok else 'no'}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smoothdist", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=0, help="RNG seed (SMOOTHDIST_SEED overrides)")
        return sp

    b = seeded(sub.add_parser("build", help="build and save a query structure"))
    b.add_argument("--input", required=True, help="polytope JSON")
    b.add_argument("--epsilon", required=True, type=_epsilon)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="evaluate the field at one point")
    q.add_argument("--structure", required=True)
    q.add_argument("--at", required=True, help='comma separated coordinates, e.g. "0.5,0.5"')
    q.add_argument("--gradient", action="store_true")
    q.set_defaults(func=cmd_query)

    g = sub.add_parser("grid", help="evaluate over a regular grid and write CSV")
    g.add_argument("--structure", required=True)
    g.add_argument("--res", required=True, type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--field", choices=GRID_FIELDS, default="blend")
    g.set_defaults(func=cmd_grid)

    v = seeded(sub.add_parser("verify", help="run the invariant suite on a structure"))
    v.add_argument("--structure", required=True)
    v.add_argument("--samples", type=int, default=2000, help="interior query points")
    v.add_argument("--lemmas", type=int, default=200, help="instances per geometric lemma suite")
    v.set_defaults(func=cmd_verify)

    be = seeded(sub.add_parser("bench", help="scaling of storage and query path length"))
    be.add_argument("--input", required=True)
    be.add_argument("--eps-list", required=True, type=_eps_list)
    be.add_argument("--out", required=True)
    be.add_argument("--queries", type=int, default=500)
    be.set_defaults(func=cmd_bench)

    d = seeded(sub.add_parser("demo", help="witness vs blended descent on a curated scenario"))
    d.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
