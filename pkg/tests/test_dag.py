import math

import numpy as np
import pytest

from smoothdist import build_dag, build_for, patches_at, ray_shoot_descend
from smoothdist.config import covering_lambda, packing_lambda
from smoothdist.dag import (
    DagStructure, assign_representative, build_delone_set, descend, lifted_samples, representative,
)
from smoothdist.errors import OutsidePolytope
from smoothdist.macbeath import intersection_measure
from smoothdist.polytope import expand, lift, normalize, sample_interior, unit_square


def _cover_fraction(s, level, count=10000, seed=99):
    """Share of fresh points of the lifted body outside every covering ellipsoid of one level."""
    Y = lifted_samples(s.polytope, count, [seed, level])
    C, S = s.centers[level], s.shapes[level]
    miss = np.ones(len(Y), dtype=bool)
    for c, M in zip(C, S):
        U = Y[miss] - c
        miss[np.flatnonzero(miss)[np.einsum("ki,ij,kj->k", U, M, U) <= 1.0]] = False
    return miss.mean()


def test_root_and_levels(square_s):
    assert square_s.level_sizes[-1] == 1
    assert square_s.m + 1 == len(square_s.level_sizes)
    assert all(a >= b for a, b in zip(square_s.level_sizes, square_s.level_sizes[1:]))


def test_high_level_single_point():
    q, _ = normalize(unit_square())
    body = lift(q)
    d = 2
    ds = build_delone_set(body, expand(body, 8.0), packing_lambda(d), covering_lambda(d))
    assert len(ds) == 1


def test_cover_grows_and_levels_step():
    p = unit_square()
    a, b = build_for(p, 0.1), build_for(p, 0.05)
    assert b.level_sizes[0] > a.level_sizes[0]
    assert b.m - a.m in (0, 1, 2)


@pytest.mark.parametrize("fixture", ["square_s", "cube_s"])
def test_packing_disjoint(fixture, request):
    s = request.getfixturevalue(fixture)
    C, S = s.centers[0], s.shapes[0] * (s.lambda_c / s.lambda_p) ** 2
    i, j = np.triu_indices(len(C), 1)
    # cheap prefilter on bounding balls, then the exact separation test
    r = 1.0 / np.sqrt(np.linalg.eigvalsh(S)[:, 0])
    near = np.linalg.norm(C[i] - C[j], axis=1) <= r[i] + r[j]
    t2 = intersection_measure(C[i[near]], S[i[near]], C[j[near]], S[j[near]], 1.0)
    assert np.all(t2 > 1.0)


@pytest.mark.parametrize("fixture", ["square_s", "cube_s"])
def test_cover_each_level(fixture, request):
    s = request.getfixturevalue(fixture)
    for level in range(s.m + 1):
        assert _cover_fraction(s, level) <= s.config.samples.residual


def test_square_cover_has_no_holes(square_s):
    assert _cover_fraction(square_s, 0) == 0.0


def test_children_overlap_parent(square_s):
    for level in range(1, square_s.m + 1):
        for i, ch in enumerate(square_s.children[level]):
            assert len(ch) > 0
            c1, M1 = square_s.centers[level][i], square_s.shapes[level][i]
            t2 = intersection_measure(c1, M1, square_s.centers[level - 1][ch], square_s.shapes[level - 1][ch])
            assert np.all(t2 <= 1.0 + 1e-9)


def test_representative_rule():
    q, _ = normalize(unit_square())
    # box rows are +x, +y, -x, -y; the center ties on all four
    assert representative(q, np.zeros(2)) == 0
    assert representative(q, np.array([-0.3, 0.01])) == 2
    assert representative(q, np.array([0.01, 0.3])) == 1


def test_representative_excess(square_s, cube_s):
    for s in (square_s, cube_s):
        assert 0.0 <= s.stats["representative_excess"] <= s.epsilon


def test_assign_representative_matches_patch(square_s):
    for i in range(0, square_s.num_patches, 7):
        node = square_s.node(0, int(square_s.patch_node[i]))
        assert node.is_top
        assert assign_representative(node, square_s) == node.rep_index == square_s.patch_rep[i]


def test_descent_center(square_s):
    q = np.zeros(2)
    leaf, path, _ = descend(square_s, q)
    assert leaf.level == 0
    assert path == square_s.m + 1
    d = float(square_s.polytope.slacks(q).min())
    v = float(square_s.polytope.slacks(q)[leaf.rep_index])
    assert d <= v <= d + square_s.epsilon
    assert ray_shoot_descend(square_s, q).index == leaf.index


def test_descent_outside(square_s):
    q = np.array([0.5 / math.sqrt(2) + 2 * square_s.epsilon, 0.0])
    with pytest.raises(OutsidePolytope):
        ray_shoot_descend(square_s, q)
    with pytest.raises(OutsidePolytope):
        patches_at(square_s, q)


def test_leaf_ray_within_gap(cube_s):
    p = cube_s.polytope
    Q = sample_interior(p, 300, 4)
    for q in Q:
        leaf, _, _ = descend(cube_s, q)
        sl = p.slacks(q)
        assert 0.0 <= sl[leaf.rep_index] - sl.min() <= cube_s.epsilon


def test_patches_at_sizes(square_s):
    Q = sample_interior(square_s.polytope, 2000, 8)
    sizes = [len(patches_at(square_s, q)) for q in Q]
    assert min(sizes) >= 1
    assert max(sizes) <= square_s.stats["max_adjacency"] + 1


@pytest.mark.parametrize("fixture", ["square_s", "cube_s"])
def test_patches_at_matches_brute_force(fixture, request):
    # the returned list is exactly the set of patches with f < 1, so a point inside
    # a single patch yields a singleton
    s = request.getfixturevalue(fixture)
    for q in sample_interior(s.polytope, 300, 5):
        U = q - s.patch_center
        f = np.einsum("ki,kij,kj->k", U, s.patch_shape, U)
        pl, fl = patches_at(s, q, with_f=True)
        assert sorted(p.node for p in pl) == sorted(s.patch_node[f < 1.0].tolist())
        np.testing.assert_allclose(np.sort(fl), np.sort(f[f < 1.0]), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("fixture", ["square_s", "cube_s"])
def test_half_scale_cover(fixture, request):
    s = request.getfixturevalue(fixture)
    Q = sample_interior(s.polytope, 10000, 21)
    U = Q[:, None, :] - s.patch_center[None]
    f = np.einsum("nki,kij,nkj->nk", U, s.patch_shape, U)
    assert f.min(axis=1).max() <= 0.5


def test_round_trip(square_s, tmp_path):
    path = tmp_path / "s.json"
    square_s.save(path)
    t = DagStructure.load(path)
    assert t.level_sizes == square_s.level_sizes
    assert t.dumps() == square_s.dumps()
    Q = sample_interior(square_s.polytope, 200, 2)
    np.testing.assert_array_equal(t.evaluate(Q)[0], square_s.evaluate(Q)[0])


def test_determinism():
    p = unit_square()
    assert build_for(p, 0.2, seed=3).dumps() == build_for(p, 0.2, seed=3).dumps()


def test_epsilon_range():
    q, _ = normalize(unit_square())
    for bad in (0.0, 0.5, -0.1):
        with pytest.raises(ValueError):
            build_dag(q, bad)
