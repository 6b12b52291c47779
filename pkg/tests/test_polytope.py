import math

import numpy as np
import pytest

from smoothdist.errors import EmptyInterior, NonPositiveDelta, PointOutside, UnboundedPolytope
from smoothdist.polytope import (
    Halfspace, Polytope, box, diameter, exact_boundary_distance, expand, lift, normalize,
    random_polytope, ray_up_distance, sample_boundary, sample_interior, simplex_triangle, unit_square,
)


def test_halfspace_requires_unit_normal():
    with pytest.raises(ValueError):
        Halfspace(np.array([2.0, 0.0]), 1.0)
    assert Halfspace(np.array([1.0, 0.0]), 1.0).slack([0.25, 3.0]) == 0.75


def test_unbounded_and_empty_rejected():
    with pytest.raises(UnboundedPolytope):
        Polytope(2, A=[[1.0, 0.0], [0.0, 1.0]], b=[1.0, 1.0])
    with pytest.raises(EmptyInterior):
        Polytope(1, A=[[1.0], [-1.0]], b=[0.0, 0.0])


def test_from_dict_normalizes_rows():
    p = Polytope.from_dict({"dim": 2, "halfspaces": [{"a": [2, 0], "b": 2}, {"a": [-3, 0], "b": 0},
                                                     {"a": [0, 1], "b": 1}, {"a": [0, -1], "b": 0}]})
    np.testing.assert_allclose(np.linalg.norm(p.A, axis=1), 1.0)
    np.testing.assert_allclose(p.b, [1, 0, 1, 0])
    q = Polytope.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.A, p.A)


def test_normalize_unit_square():
    q, tr = normalize(unit_square())
    assert tr.scale == pytest.approx(1 / math.sqrt(2), rel=1e-12)
    np.testing.assert_allclose(tr.apply([0.5, 0.5]), [0, 0], atol=1e-12)
    assert diameter(q) == pytest.approx(1.0, rel=1e-9)
    c, _ = q.chebyshev_center()
    np.testing.assert_allclose(c, 0, atol=1e-9)


def test_normalize_fixed_point():
    h = 1 / (2 * math.sqrt(2))
    _, tr = normalize(box([-h, -h], [h, h]))
    assert tr.scale == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(tr.translation, 0, atol=1e-12)


def test_normalize_triangle_scale():
    _, tr = normalize(simplex_triangle())
    assert tr.scale == pytest.approx(1 / math.sqrt(2), rel=1e-12)


def test_transform_round_trip():
    _, tr = normalize(random_polytope(3, 10, 2))
    x = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(tr.invert(tr.apply(x)), x, atol=1e-14)


@pytest.mark.parametrize("x, want", [((0.5, 0.5), 0.5), ((0.2, 0.5), 0.2)])
def test_exact_distance_square(x, want):
    assert exact_boundary_distance(unit_square(), x) == pytest.approx(want, abs=1e-15)


def test_exact_distance_triangle():
    assert exact_boundary_distance(simplex_triangle(), [0.25, 0.25]) == pytest.approx(0.25, abs=1e-15)


def test_exact_distance_outside_raises():
    with pytest.raises(PointOutside):
        exact_boundary_distance(unit_square(), [1.5, 0.5])


def test_lift_halfspaces():
    p = Polytope(2, A=[[1, 0], [-1, 0], [0, 1], [0, -1]], b=[1, 1, 1, 1])
    body = lift(p)
    # first upper halfspace: (a, 1)/sqrt2 . (x, z) <= b/sqrt2, i.e. z <= 1 - x
    np.testing.assert_allclose(body.A[0], np.array([1, 0, 1]) / math.sqrt(2))
    assert body.b[0] == pytest.approx(1 / math.sqrt(2))
    assert body.has_ground
    np.testing.assert_allclose(body.A[-1], [0, 0, -1])  # outward form of z >= 0
    assert ray_up_distance(lift(unit_square()), [0.5, 0.5, 0.0]) == pytest.approx(0.5)


def test_expand():
    p = Polytope(2, A=[[1, 0], [-1, 0], [0, 1], [0, -1]], b=[1, 1, 1, 1])
    e = expand(lift(p), 0.1)
    assert not e.has_ground
    assert e.b[0] * math.sqrt(2) == pytest.approx(1.1)
    with pytest.raises(NonPositiveDelta):
        expand(lift(p), 0.0)


def test_expanded_separation():
    q, _ = normalize(random_polytope(2, 12, 1))
    body = lift(q)
    eps = 0.1
    X = sample_interior(q, 500, 0)
    Y = np.column_stack([X, exact_boundary_distance(q, X)])  # envelope points
    gap = expand(body, eps).slacks(Y).min(axis=1)
    assert gap.min() >= eps / math.sqrt(3) - 1e-12


def test_ray_up_distance():
    q, _ = normalize(unit_square())
    c = np.zeros(3)
    d0 = ray_up_distance(lift(q), c)
    assert d0 == pytest.approx(0.5 / math.sqrt(2), rel=1e-12)
    assert ray_up_distance(expand(lift(q), 0.1), c) == pytest.approx(d0 + 0.1, rel=1e-12)
    assert ray_up_distance(lift(q), [0, 0, d0]) == pytest.approx(0.0, abs=1e-15)


def test_sampling_inside_and_on_boundary():
    p = random_polytope(3, 14, 5)
    X = sample_interior(p, 300, 1, margin=1e-6)
    assert X.shape == (300, 3)
    assert np.all(p.slacks(X).min(axis=1) > 1e-6)
    B = sample_boundary(p, 100, 1)
    np.testing.assert_allclose(p.slacks(B).min(axis=1), 0, atol=1e-12)
    np.testing.assert_array_equal(sample_interior(p, 50, 9), sample_interior(p, 50, 9))


def test_redundant_halfspace_kept():
    A = [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 0]]
    p = Polytope(2, A=A, b=[1, 0, 1, 0, 5])
    assert p.n == 5
    assert exact_boundary_distance(p, [0.3, 0.5]) == pytest.approx(0.3)
