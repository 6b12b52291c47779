import json

import numpy as np
import pytest

from smoothdist import build_for
from smoothdist.polytope import box, random_polytope, regular_polygon, simplex_triangle, unit_square

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def ci_polytopes():
    """Small fixed inputs used for end-to-end checks."""
    return {
        "square": unit_square(),
        "triangle": simplex_triangle(),
        "hexagon": regular_polygon(6, 0.5),
        "random2d": random_polytope(2, 16, 3),
        "cube": box([0, 0, 0], [1, 1, 1]),
        "random3d": random_polytope(3, 12, 4),
    }


def write_polytope(p, path):
    path.write_text(json.dumps(p.to_dict()))
    return path


@pytest.fixture(scope="session")
def square_s():
    return build_for(unit_square(), 0.1, seed=0)


@pytest.fixture(scope="session")
def cube_s():
    return build_for(random_polytope(3, 12, 4), 0.2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
