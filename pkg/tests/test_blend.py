import math

import numpy as np
import pytest

from smoothdist import eval_gradient, eval_hessian_fd, evaluate, mollifier
from smoothdist.blend import F_value, Patch, blend_patches, evaluate_many, kappa, weight_gradients, weights
from smoothdist.errors import DomainError, EmptyPatchList, OutsidePolytope
from smoothdist.polytope import sample_interior


def _patch(center, shape, a, b):
    return Patch(np.asarray(center, float), np.asarray(shape, float), np.asarray(a, float), float(b))


P1 = _patch([0, 0], np.eye(2), [1, 0], 1.0)
P2 = _patch([0.5, 0], np.eye(2) * 2, [0, 1], 0.8)


def test_mollifier_values():
    assert mollifier(0.0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert mollifier(1.0) == mollifier(-1.0) == mollifier(2.0) == 0.0
    assert mollifier(0.5) == pytest.approx(math.exp(-4 / 3), abs=1e-15)
    assert mollifier(0.5) > 0.26
    np.testing.assert_allclose(mollifier(np.array([0.3, -0.3])), [mollifier(0.3)] * 2)


def test_weights_single_and_pair():
    Psi, psi, phi = weights([P1], [0, 0])
    assert psi[0] == pytest.approx(math.exp(-1)) and phi[0] == 1.0
    Psi, psi, phi = weights([P1, P1], [0.3, 0.1])
    np.testing.assert_allclose(phi, [0.5, 0.5])


def test_weight_vanishes_at_exit():
    x = np.array([1 - 1e-12, 0.0]) ** 0.5 * np.array([1.0, 0.0])  # f = 1 - 1e-12
    Psi, psi, phi = weights([P1, P2], x)
    assert psi[0] == pytest.approx(0.0, abs=1e-300)
    assert phi[0] == pytest.approx(0.0, abs=1e-300)


def test_weights_empty():
    with pytest.raises(EmptyPatchList):
        weights([], [0, 0])
    with pytest.raises(EmptyPatchList):
        weights([P1], [2.0, 0.0])


def test_single_patch_value_and_gradient():
    x = np.array([0.2, 0.3])
    value, grad, _ = blend_patches([P1], x)
    assert value == P1.v(x)
    np.testing.assert_array_equal(grad, -P1.a)


def test_shared_representative_collapses():
    Q = _patch([0.3, 0.1], np.eye(2) * 3, P1.a, P1.b)
    x = np.array([0.2, 0.05])
    value, grad, _ = blend_patches([P1, Q], x)
    assert value == pytest.approx(P1.v(x), abs=1e-15)
    np.testing.assert_allclose(grad, -P1.a, atol=1e-15)


def test_blend_gradient_matches_fd():
    x = np.array([0.2, 0.1])
    h = 1e-6
    _, g, _ = blend_patches([P1, P2], x)
    fd = [(blend_patches([P1, P2], x + h * e)[0] - blend_patches([P1, P2], x - h * e)[0]) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_weight_gradients_sum_to_zero():
    _, gphi = weight_gradients([P1, P2], [0.2, 0.1])
    np.testing.assert_allclose(gphi.sum(axis=0), 0.0, atol=1e-14)


def test_kappa():
    assert kappa(0.0) == 0.0
    s = np.linspace(-1 + 1e-9, 1 - 1e-9, 1_000_001)
    k = kappa(s)
    assert np.abs(k).max() < 0.5
    np.testing.assert_array_equal(kappa(-s), -k)
    with pytest.raises(DomainError):
        kappa(1.0)


def test_structure_sandwich(square_s):
    p = square_s.polytope
    Q = sample_interior(p, 10000, 3)
    val, _, Psi, *_ = evaluate_many(square_s, Q)
    d = p.slacks(Q).min(axis=1)
    assert np.all(val >= d - 1e-9)
    assert np.all(val <= d + square_s.epsilon + 1e-9)
    assert Psi.min() > 0.25


def test_evaluate_matches_batch(square_s):
    Q = sample_interior(square_s.polytope, 50, 4)
    val, grad, Psi, *_ = evaluate_many(square_s, Q)
    for q, v, g, ps in zip(Q, val, grad, Psi):
        r = evaluate(square_s, q)
        assert r.value == pytest.approx(v, abs=1e-14)
        np.testing.assert_allclose(r.gradient, g, atol=1e-12)
        assert r.Psi == pytest.approx(ps, rel=1e-12)
        assert sum(c.phi for c in r.contributions) == pytest.approx(1.0, abs=1e-12)


def test_original_coordinates(square_s):
    r = evaluate(square_s, [0.5, 0.5], original=True)
    assert 0.5 - 1e-12 <= r.value <= 0.5 + 0.1 * math.sqrt(2)
    with pytest.raises(OutsidePolytope):
        evaluate(square_s, [3.0, 0.5], original=True)


def test_shared_representative_in_structure(square_s):
    # points near the middle of a side see patches that all use that side
    p = square_s.polytope
    Q = sample_interior(p, 3000, 6)
    hits = 0
    for q in Q:
        r = evaluate(square_s, q)
        reps = {int(square_s.patch_rep[c.patch_id]) for c in r.contributions}
        if len(reps) == 1:
            j = reps.pop()
            assert r.value == pytest.approx(p.b[j] - p.A[j] @ q, abs=1e-15)
            np.testing.assert_allclose(r.gradient, -p.A[j], atol=1e-12)
            hits += 1
    assert hits > 0


def test_gradient_fd(square_s, cube_s):
    for s in (square_s, cube_s):
        p = s.polytope
        Q = sample_interior(p, 1000, 7, margin=1e-5)
        h = 1e-6
        G = np.array([eval_gradient(s, q) for q in Q])
        fd = np.empty_like(G)
        for k, e in enumerate(np.eye(p.dim)):
            fd[:, k] = (evaluate_many(s, Q + h * e)[0] - evaluate_many(s, Q - h * e)[0]) / (2 * h)
        assert np.abs(G - fd).max() <= 1e-4


def test_hessian_affine_region(square_s):
    # where every contributing patch shares one representative the field is affine
    p = square_s.polytope
    h = 1e-5
    seen = 0
    for q in sample_interior(p, 2000, 9, margin=1e-3):
        r = evaluate(square_s, q)
        if len({int(square_s.patch_rep[c.patch_id]) for c in r.contributions}) == 1:
            assert np.abs(eval_hessian_fd(square_s, q, h)).max() < 1e-6 / h
            seen += 1
    assert seen > 0


def test_F_bounds(square_s):
    p = square_s.polytope
    eps = square_s.epsilon
    worst = 0.0
    for q in sample_interior(p, 10000, 10):
        r = evaluate(square_s, q)
        for c in r.contributions:
            worst = max(worst, abs(F_value(square_s.patch(c.patch_id), q, r)))
    assert worst <= 8 * eps


def test_F_single_patch_and_exit():
    x = np.array([0.1, 0.2])
    value, _, Psi = blend_patches([P1], x)
    assert F_value(P1, x, (Psi, value)) == 0.0
    edge = np.array([1 - 1e-10, 0.0])
    value, _, Psi = blend_patches([P1, P2], edge)
    assert abs(F_value(P1, edge, (Psi, value))) < 1e-12
