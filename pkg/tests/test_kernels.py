import json
import os
import subprocess
import sys

import numpy as np
import pytest

from smoothdist import kernels
from smoothdist.macbeath import macbeath_region
from smoothdist.polytope import expand, lift, normalize, random_polytope, sample_interior

BACKENDS = kernels.available_backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def _pair(rng, n, D):
    L1, L2 = rng.normal(size=(n, D, D)), rng.normal(size=(n, D, D))
    M1 = L1 @ np.swapaxes(L1, 1, 2) + 0.5 * np.eye(D)
    M2 = L2 @ np.swapaxes(L2, 1, 2) + 0.5 * np.eye(D)
    return rng.normal(size=(n, D)), M1, rng.normal(size=(n, D)), M2


def test_backend_names():
    assert BACKENDS["python"].BACKEND == "python"
    assert kernels.BACKEND in BACKENDS
    assert kernels.backend() is BACKENDS[kernels.BACKEND]


@needs_compiled
def test_intersection_parity(rng):
    c1, M1, c2, M2 = _pair(rng, 2000, 3)
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    a, b = py.intersection_t2(c1, M1, c2, M2, np.inf), cy.intersection_t2(c1, M1, c2, M2, np.inf)
    np.testing.assert_allclose(a, b, rtol=1e-10)
    # with a bound only the verdict is defined
    np.testing.assert_array_equal(py.intersection_t2(c1, M1, c2, M2, 1.0) <= 1.0,
                                  cy.intersection_t2(c1, M1, c2, M2, 1.0) <= 1.0)


def test_intersection_known_values():
    for name, k in BACKENDS.items():
        c1 = np.zeros((1, 2))
        c2 = np.array([[3.0, 0.0]])
        I = np.eye(2)[None]
        # two unit disks 3 apart need scale 3/2 to touch, so t^2 = 9/4
        assert k.intersection_t2(c1, I, c2, I, np.inf)[0] == pytest.approx(2.25, rel=1e-9), name


@needs_compiled
def test_quad_any_parity(rng):
    P, C = rng.normal(size=(3000, 3)), rng.normal(size=(200, 3))
    S = np.repeat((3.0 * np.eye(3))[None], 200, axis=0)
    idx = rng.integers(0, 200, size=3000 * 5).astype(np.int64)
    ptr = np.arange(0, 3000 * 5 + 1, 5, dtype=np.int64)
    a = BACKENDS["python"].quad_any(P, C, S, ptr, idx, 1.0)
    b = BACKENDS["cython"].quad_any(P, C, S, ptr, idx, 1.0)
    np.testing.assert_array_equal(np.asarray(a, bool), np.asarray(b, bool))


@needs_compiled
def test_inscribed_shape_parity():
    q, _ = normalize(random_polytope(3, 20, 1))
    body = expand(lift(q), 0.1)
    for x in sample_interior(q, 10, 2):
        top = float(q.slacks(x).min())
        G = macbeath_region(body, np.append(x, 0.5 * top), 1.0).G()
        Ma = BACKENDS["python"].inscribed_shape(G, 1e-7, 200000)[0]
        Mb = BACKENDS["cython"].inscribed_shape(G, 1e-7, 200000)[0]
        # both stop at the same relative volume tolerance, not at the same iterate
        assert np.abs(Ma - Mb).max() / np.abs(Ma).max() < 1e-4
        assert abs(np.linalg.slogdet(Ma)[1] - np.linalg.slogdet(Mb)[1]) < 1e-5


@needs_compiled
@pytest.mark.parametrize("fixture", ["square_s", "cube_s"])
def test_query_parity(fixture, request):
    s = request.getfixturevalue(fixture)
    tab = s.query_tables()
    Q = np.vstack([sample_interior(s.polytope, 1000, 3), [[5.0] * s.dim]])
    a = BACKENDS["python"].evaluate_batch(tab, Q)
    b = BACKENDS["cython"].evaluate_batch(tab, Q)
    for x, y in zip(a, b):
        np.testing.assert_allclose(np.asarray(x, float), np.asarray(y, float), rtol=1e-12, atol=1e-13)
    for q in Q[:100]:
        la, lb = BACKENDS["python"].locate(tab, q), BACKENDS["cython"].locate(tab, q)
        assert la[:5] == lb[:5]
        np.testing.assert_array_equal(la[5], lb[5])


def test_pure_python_subprocess(square_s):
    """Forcing the reference backend gives the same answers in a fresh interpreter."""
    Q = sample_interior(square_s.polytope, 20, 4)
    code = (
        "import json, sys, numpy as np\n"
        "from smoothdist import BACKEND, build_for\n"
        "from smoothdist.polytope import unit_square\n"
        "s = build_for(unit_square(), 0.1, seed=0)\n"
        "Q = np.array(json.loads(sys.stdin.read()))\n"
        "print(json.dumps({'backend': BACKEND, 'values': s.evaluate(Q)[0].tolist(), 'sizes': s.level_sizes}))\n"
    )
    env = dict(os.environ, SMOOTHDIST_PURE_PYTHON="1")
    r = subprocess.run([sys.executable, "-c", code], input=json.dumps(Q.tolist()), capture_output=True,
                       text=True, env=env, timeout=600)
    assert r.returncode == 0, r.stderr
    out = json.loads(r.stdout)
    assert out["backend"] == "python"
    # the build's ellipsoid solver stops at a tolerance, so structures may differ in the last digits
    np.testing.assert_allclose(out["values"], square_s.evaluate(Q)[0], atol=1e-6)
