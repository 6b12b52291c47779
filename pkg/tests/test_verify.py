import numpy as np
import pytest

from smoothdist.dag import DagStructure
from smoothdist.verify import ball_suite, expansion_suite, john_suite, ray_suite, verify_structure


@pytest.fixture(scope="module")
def square_report(square_s):
    return verify_structure(square_s, 1000, lemma_instances=50)


def test_fresh_build_passes(square_report):
    assert square_report.passed, square_report.table()
    assert square_report["blend.psi_lower_bound"].measured > 0.25
    assert "all invariants hold" in square_report.table()


def test_report_constants(square_report, square_s):
    c = square_report.constants
    assert c["levels"] == square_s.m + 1
    assert c["min_Psi"] > 0.25
    assert 0 < c["max_error"] <= square_s.epsilon
    assert c["min_radius_over_eps"] > 0


def test_3d_build_passes(cube_s):
    rep = verify_structure(cube_s, 500, lemma_instances=0)
    assert rep.passed, rep.table()


def test_indefinite_patch_is_named(square_s):
    data = square_s.to_dict()
    shape = np.array(data["patches"][3]["shape"])
    shape[0] = -abs(shape[0])
    data["patches"][3]["shape"] = shape.tolist()
    rep = verify_structure(DagStructure.from_dict(data), 200, lemma_instances=0)
    assert not rep.passed
    bad = rep["ellipsoid.positive_definite"]
    assert not bad.passed and "patch 3" in bad.detail


def test_broken_child_link(square_s):
    data = square_s.to_dict()
    data["levels"][1][0]["children"] = [10 ** 6]
    rep = verify_structure(DagStructure.from_dict(data), 200, lemma_instances=0)
    assert "dag.children_linked" in rep.failed


def test_unknown_check_name(square_report):
    with pytest.raises(KeyError):
        square_report["no.such.check"]


@pytest.mark.parametrize("suite", [john_suite, expansion_suite, ray_suite, ball_suite])
def test_lemma_suites_small(suite):
    res = suite(60, seed=1)
    assert res.passed, res.detail
