"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line with its measured numbers; the lines are
printed together at the end of the session by the hook in conftest.py.
"""

import time

import numpy as np
import pytest

from smoothdist import build_for, eval_hessian_fd
from smoothdist.baseline import BlendedField, WitnessField, jump_census, run_demo
from smoothdist.blend import evaluate_many
from smoothdist.cli import main
from smoothdist.kernels import STATUS_OK
from smoothdist.polytope import random_polytope, sample_interior, unit_square
from smoothdist.verify import lemma_suites

from conftest import ci_polytopes, record, write_polytope

pytestmark = pytest.mark.slow

FACETS = (8, 16, 24, 40, 64)
SWEEP_EPS = (0.2, 0.1, 0.05)
SQUARE_EPS = (0.2, 0.1, 0.05, 0.025)
QUERIES = 10_000
FD_POINTS = 1000
FD_H = 1e-6


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@pytest.fixture(scope="module")
def sweep():
    """Builds for d in {2, 3}, five random polytopes each, three epsilons."""
    rows = []
    timed = 0.0
    for d in (2, 3):
        for k, n in enumerate(FACETS):
            p = random_polytope(d, n, 100 + 10 * d + k)
            for eps in SWEEP_EPS:
                t0 = time.perf_counter()
                s = build_for(p, eps, seed=0)
                Q = sample_interior(s.polytope, QUERIES, 1000 + k)
                val, grad, Psi, npatch, _, _, st, _ = evaluate_many(s, Q)
                timed += time.perf_counter() - t0
                dist = s.polytope.slacks(Q).min(axis=1)
                # gradient against central differences, away from the boundary so the stencil stays inside
                F = sample_interior(s.polytope, FD_POINTS, 2000 + k, margin=10 * FD_H)
                G = evaluate_many(s, F)
                fd = np.empty((len(F), d))
                for j, e in enumerate(np.eye(d)):
                    fd[:, j] = (evaluate_many(s, F + FD_H * e)[0] - evaluate_many(s, F - FD_H * e)[0]) / (2 * FD_H)
                rows.append({
                    "d": d, "n": n, "eps": eps,
                    "status_ok": bool(np.all(st == STATUS_OK)),
                    "low": float((val - dist).min()), "high": float((val - dist - eps).max()),
                    "max_err": float((val - dist).max()),
                    "psi": float(min(Psi.min(), G[2].min())),
                    "fd": float(np.abs(G[1] - fd).max()),
                })
                del s
    return rows, timed


@pytest.fixture(scope="module")
def square_sweep():
    out = []
    p = unit_square()
    for eps in SQUARE_EPS:
        s = build_for(p, eps, seed=0)
        Q = sample_interior(s.polytope, QUERIES, 77)
        _, grad, _, npatch, _, _, st, path = evaluate_many(s, Q)
        H = sample_interior(s.polytope, FD_POINTS, 78, margin=1e-4)
        hess = max(np.linalg.norm(eval_hessian_fd(s, q, 1e-5), 2) for q in H)
        out.append({
            "eps": eps, "x0": s.level_sizes[0], "depth": int(npatch.max()), "path": float(path.mean()),
            "grad": float(np.linalg.norm(grad, axis=1).max()), "hess": float(hess),
            "ok": bool(np.all(st == STATUS_OK)),
        })
    return out


def test_criterion_01_sandwich(sweep):
    rows, timed = sweep
    bad = [r for r in rows if not (r["status_ok"] and r["low"] >= -1e-9 and r["high"] <= 1e-9)]
    worst = max(r["max_err"] / r["eps"] for r in rows)
    ok = not bad and timed < 300.0
    record(1, ok, f"{len(rows)} builds x {QUERIES} queries, violations in {len(bad)} builds, "
                  f"max error/eps {worst:.3f}, min(d~ - d) {min(r['low'] for r in rows):.2e}, "
                  f"build+query time {timed:.0f}s (target < 300s)")
    assert not bad, bad
    assert timed < 300.0


def test_criterion_02_gradient(sweep):
    rows, _ = sweep
    worst = max(r["fd"] for r in rows)
    record(2, worst <= 1e-4, f"max |closed form - central difference| = {worst:.2e} over "
                             f"{len(rows)} builds x {FD_POINTS} points (tol 1e-4)")
    assert worst <= 1e-4


def test_criterion_03_psi(sweep):
    rows, _ = sweep
    low = min(r["psi"] for r in rows)
    record(3, low > 0.25, f"min Psi = {low:.4f} over all evaluated points (must exceed 0.25)")
    assert low > 0.25


def test_criterion_04_depth(square_sweep):
    depths = [r["depth"] for r in square_sweep]
    ratio = max(depths) / min(depths)
    record(4, ratio <= 2, f"max patches per query {depths} across eps {list(SQUARE_EPS)}, ratio {ratio:.2f} (<= 2)")
    assert ratio <= 2


def test_criterion_05_storage(square_sweep):
    slope = _slope([1 / r["eps"] for r in square_sweep], [r["x0"] for r in square_sweep])
    record(5, slope <= 1.7, f"|X_0| {[r['x0'] for r in square_sweep]}, log-log slope {slope:.3f} (<= 1.7)")
    assert slope <= 1.7


def test_criterion_06_path(square_sweep):
    steps = [b["path"] - a["path"] for a, b in zip(square_sweep, square_sweep[1:])]
    ok = all(0.0 <= s <= 2.0 for s in steps)
    record(6, ok, f"mean path length {[round(r['path'], 3) for r in square_sweep]}, "
                  f"increase per halving {[round(s, 3) for s in steps]} (1 +- 1)")
    assert ok


def test_criterion_07_gradient_norm(square_sweep):
    g = [r["grad"] for r in square_sweep]
    ratio = max(g) / min(g)
    record(7, ratio <= 2, f"max |grad| {[round(x, 3) for x in g]}, ratio {ratio:.3f} (<= 2)")
    assert ratio <= 2


def test_criterion_08_hessian(square_sweep):
    h = [r["hess"] for r in square_sweep]
    slope = _slope([1 / r["eps"] for r in square_sweep], h)
    record(8, slope <= 1.5, f"max |Hessian| {[round(x, 1) for x in h]}, log-log slope vs 1/eps {slope:.3f} (<= 1.5)")
    assert slope <= 1.5


def test_criterion_09_lemmas():
    res = lemma_suites(1000, seed=0)
    ok = all(r.passed for r in res)
    record(9, ok, "; ".join(f"{r.name} {'ok' if r.passed else 'FAILED'} "
                                f"(measured {r.measured:.4g}; {r.detail})" for r in res))
    assert ok, [r.detail for r in res if not r.passed]


def test_criterion_10_discontinuity():
    parts, ok = [], True
    for name in ("wedge", "square-loop"):
        demo = run_demo(name)
        p = demo.structure.polytope
        wj = jump_census(WitnessField(demo.structure), p, 100, seed=5)
        bj = jump_census(BlendedField(demo.structure), p, 100, seed=5)
        this = wj >= 1 and bj == 0 and demo.witness_pathological and demo.blended_ok
        ok &= this
        parts.append(f"{name}: witness jumps on {wj}/100 segments, blended on {bj}/100, "
                     f"witness descent {demo.witness.terminated} (jitter {demo.witness.jitter}), "
                     f"blended {demo.blended.terminated}")
    record(10, ok, "; ".join(parts))
    assert ok


def test_criterion_11_determinism(tmp_path):
    parts, ok = [], True
    for name, p in ci_polytopes().items():
        src = write_polytope(p, tmp_path / f"{name}.json")
        eps = "0.1" if p.dim == 2 else "0.2"
        a, b = tmp_path / f"{name}.a.json", tmp_path / f"{name}.b.json"
        built = all(main(["build", "--input", str(src), "--epsilon", eps, "--out", str(o), "--seed", "7"]) == 0
                    for o in (a, b))
        same = built and a.read_bytes() == b.read_bytes()
        code = main(["verify", "--structure", str(a)]) if built else -1
        ok &= same and code == 0
        parts.append(f"{name}: identical={same} verify={code}")
    record(11, ok, "; ".join(parts))
    assert ok
