import numpy as np
import pytest

from smoothdist import build_for, evaluate
from smoothdist.baseline import (
    SCENARIOS, BlendedField, ExactField, WitnessField, jump_census, random_segments, run_demo,
    scan_discontinuities, trace_descent, witness_eval,
)
from smoothdist.errors import OutsidePolytope
from smoothdist.polytope import random_polytope, sample_interior


@pytest.fixture(scope="module")
def coarse():
    return build_for(random_polytope(2, 7, 2), 0.2, seed=0)


@pytest.fixture(scope="module")
def demos():
    return {name: run_demo(name) for name in SCENARIOS}


def test_witness_sandwich(square_s):
    p = square_s.polytope
    Q = sample_interior(p, 10000, 11)
    w = WitnessField(square_s).values(Q)
    d = p.slacks(Q).min(axis=1)
    assert np.all(w >= d - 1e-12)
    assert np.all(w <= d + square_s.epsilon + 1e-12)


def test_witness_matches_blend_on_shared_representative(square_s):
    p = square_s.polytope
    checked = 0
    for q in sample_interior(p, 2000, 12):
        r = evaluate(square_s, q)
        if len({int(square_s.patch_rep[c.patch_id]) for c in r.contributions}) == 1:
            assert witness_eval(square_s, q) == pytest.approx(r.value, abs=1e-12)
            checked += 1
    assert checked > 0


def test_witness_deterministic_and_outside(square_s):
    q = np.array([0.05, -0.1])
    assert witness_eval(square_s, q) == witness_eval(square_s, q)
    with pytest.raises(OutsidePolytope):
        witness_eval(square_s, [5.0, 0.0])


def test_exact_field_has_no_jumps(coarse):
    fld = ExactField(coarse.polytope)
    for seg in random_segments(coarse.polytope, 100, 1):
        assert scan_discontinuities(fld, seg) == []


def test_blend_has_no_jumps(coarse):
    assert jump_census(BlendedField(coarse), coarse.polytope, 100, seed=2) == 0


def test_witness_jumps(coarse):
    assert jump_census(WitnessField(coarse), coarse.polytope, 100, seed=2) >= 1


def test_scan_reports_positions():
    class Step:
        def values(self, X):
            return (X[:, 0] > 0.5).astype(float)

    hits = scan_discontinuities(Step(), (np.zeros(2), np.ones(2)), steps=100)
    assert len(hits) == 1
    t, jump = hits[0]
    assert abs(t - 0.5) <= 0.01 and jump == 1.0


def test_blended_ascent_from_square_center(square_s):
    tr = trace_descent(BlendedField(square_s), np.array([0.2, -0.1]), 0.005, 2000)
    assert tr.terminated == "converged"
    assert tr.monotone
    assert tr.jitter == 0


def test_step_must_be_positive(square_s):
    with pytest.raises(ValueError):
        trace_descent(BlendedField(square_s), np.zeros(2), 0.0)


def test_wedge_demo(demos):
    d = demos["wedge"]
    assert d.witness.terminated == "cycled" or d.witness.jitter >= 10
    assert d.blended.terminated == "converged" and d.blended.jitter == 0
    assert d.blended.monotone


def test_square_loop_demo(demos):
    d = demos["square-loop"]
    assert d.witness.terminated in ("cycled", "maxSteps") or d.witness.jitter >= 10
    assert d.blended_ok


def test_demo_unknown():
    with pytest.raises(ValueError):
        run_demo("spiral")


def test_trace_csv(demos, tmp_path):
    d = demos["wedge"]
    path = tmp_path / "t.csv"
    d.blended.to_csv(path, transform=d.structure.transform)
    rows = path.read_text().splitlines()
    assert rows[0] == "step,x0,x1,value"
    assert len(rows) == len(d.blended.points) + 1
    x0 = np.array([float(v) for v in rows[1].split(",")[1:3]])
    np.testing.assert_allclose(x0, SCENARIOS["wedge"].start, atol=1e-12)
