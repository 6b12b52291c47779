"""Python reference kernels vs the compiled extension.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--out bench_kernels.csv]

Each kernel runs on identical inputs under both backends; the table reports
best-of-repeat wall time, the speedup and the largest output difference
relative to the output's magnitude. The inscribed-shape solver stops at a
relative volume tolerance of 1e-6, so its backends agree only to that level.
"""

from __future__ import annotations

import argparse
import csv
import time

import numpy as np

from smoothdist import build_for
from smoothdist.kernels import available_backends
from smoothdist.macbeath import macbeath_region
from smoothdist.polytope import expand, lift, random_polytope, sample_interior


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _diff(a, b) -> float:
    """Largest difference relative to the output's magnitude."""
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return float("inf")
    both = np.isnan(a) & np.isnan(b)
    scale = max(1.0, float(np.max(np.abs(np.where(both, 0.0, a)), initial=0.0)))
    return float(np.max(np.abs(np.where(both, 0.0, a - b)), initial=0.0)) / scale


def cases(seed: int = 0):
    rng = np.random.default_rng(seed)
    p = random_polytope(3, 24, seed)
    body = expand(lift(p), 0.1)

    # one Frank-Wolfe solve per Macbeath region
    X = sample_interior(p, 64, seed)
    regions = []
    for x in X:
        top = float((p.b - p.A @ x).min())
        regions.append(macbeath_region(body, np.append(x, 0.5 * top), 1.0).G())
    yield "inscribed_shape x64", lambda k: tuple(k.inscribed_shape(G, 1e-6, 200000)[0] for G in regions)

    # pairwise ellipsoid separation, batch of 4096
    n = 4096
    C1, C2 = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
    L1, L2 = rng.normal(size=(n, 4, 4)), rng.normal(size=(n, 4, 4))
    M1 = L1 @ np.swapaxes(L1, 1, 2) + 0.5 * np.eye(4)
    M2 = L2 @ np.swapaxes(L2, 1, 2) + 0.5 * np.eye(4)
    yield "intersection_t2 x4096", lambda k: k.intersection_t2(C1, M1, C2, M2, np.inf)
    # with a bound only the verdict t^2 <= bound is defined
    yield "intersection_t2 x4096 (bound 1)", lambda k: (k.intersection_t2(C1, M1, C2, M2, 1.0) <= 1.0).astype(float)

    # coverage test of points against candidate ellipsoid lists
    P = rng.normal(size=(20000, 4))
    C = rng.normal(size=(500, 4))
    S = np.repeat((4.0 * np.eye(4))[None], 500, axis=0)
    idx = rng.integers(0, 500, size=20000 * 8)
    ptr = np.arange(0, 20000 * 8 + 1, 8)
    yield "quad_any 20000x8", lambda k: k.quad_any(P, C, S, ptr, idx, 1.0).astype(float)

    # queries against a built structure
    s = build_for(random_polytope(2, 16, seed), 0.05, seed=seed)
    tab = s.query_tables()
    Q = sample_interior(s.polytope, 2000, seed + 1)
    yield "locate x500", lambda k: tuple(np.asarray(k.locate(tab, q)[3], dtype=float) for q in Q[:500])
    yield "evaluate_batch x2000", lambda k: k.evaluate_batch(tab, Q)[:3]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV of the table")
    args = ap.parse_args(argv)

    backs = available_backends()
    if "cython" not in backs:
        print("compiled extension not available; only the python backend will be timed")
    rows = []
    print(f"{'kernel':34} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8} {'rel diff':>10}")
    for name, fn in cases(args.seed):
        tp, out_p = best_time(lambda: fn(backs["python"]), args.repeat)
        if "cython" in backs:
            tc, out_c = best_time(lambda: fn(backs["cython"]), args.repeat)
            diff = _diff(out_p, out_c)
        else:
            tc, diff = float("nan"), float("nan")
        rows.append({"kernel": name, "python_s": tp, "cython_s": tc, "speedup": tp / tc, "rel_diff": diff})
        print(f"{name:34} {tp:11.4f} {tc:11.4f} {tp / tc:8.1f} {diff:10.2e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
