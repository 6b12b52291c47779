"""Reference fields and the pathologies of unblended (witness) distance answers.

Three fields share one small interface (``values`` for a batch of points,
``gradient`` at a single point):

* ``ExactField``   min-slack oracle, 1-Lipschitz, gradient -a_j of the active facet
* ``WitnessField`` v_rep of the single leaf patch found by descent, no blending
* ``BlendedField`` the smooth partition-of-unity field

All coordinates are normalized ones; the CLI converts at its boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .blend import evaluate_many
from .dag import DagStructure, build_for
from .errors import OutsidePolytope
from .polytope import Polytope

LIPSCHITZ_BUDGET = 4.0
CYCLE_WINDOW = 64
CONVERGE_SPAN = 5


class ExactField:
    name = "exact"

    def __init__(self, polytope: Polytope):
        self.polytope = polytope

    def values(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        s = self.polytope.b - Q @ self.polytope.A.T
        out = s.min(axis=1)
        out[out < -1e-12] = np.nan
        return out

    def gradient(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        s = self.polytope.b - self.polytope.A @ q
        if s.min() < -1e-12:
            raise OutsidePolytope("point is outside the polytope")
        return -self.polytope.A[int(np.argmin(s))].copy()


class WitnessField:
    """v_rep(q) of the descent leaf, without any blending."""

    name = "witness"

    def __init__(self, structure: DagStructure):
        self.structure = structure

    def _leaf_patch(self, q) -> int:
        st, _, p0, *_ = kernels.locate(self.structure.query_tables(), np.asarray(q, dtype=float))
        if st != kernels.STATUS_OK:
            raise OutsidePolytope("point is outside the polytope")
        return int(p0)

    def values(self, Q) -> np.ndarray:
        out = evaluate_many(self.structure, Q)
        w = out[5].copy()
        w[out[6] != kernels.STATUS_OK] = np.nan
        return w

    def gradient(self, q) -> np.ndarray:
        return -self.structure.polytope.A[self.structure.patch_rep[self._leaf_patch(q)]].copy()


class BlendedField:
    name = "blend"

    def __init__(self, structure: DagStructure):
        self.structure = structure

    def values(self, Q) -> np.ndarray:
        out = evaluate_many(self.structure, Q)
        v = out[0].copy()
        v[out[6] != kernels.STATUS_OK] = np.nan
        return v

    def gradient(self, q) -> np.ndarray:
        out = evaluate_many(self.structure, np.asarray(q, dtype=float)[None, :])
        if out[6][0] != kernels.STATUS_OK:
            raise OutsidePolytope("point is outside the polytope")
        return out[1][0]


def witness_eval(w: WitnessField | DagStructure, q) -> float:
    """Unblended answer at q; raises OutsidePolytope outside Omega."""
    if isinstance(w, DagStructure):
        w = WitnessField(w)
    v = w.values(np.asarray(q, dtype=float)[None, :])[0]
    if np.isnan(v):
        raise OutsidePolytope("point is outside the polytope")
    return float(v)


def scan_discontinuities(fld, segment, steps: int = 200, lipschitz: float = LIPSCHITZ_BUDGET):
    """Parameter locations t where |f(x_{k+1}) - f(x_k)| > L h along the segment."""
    p0, p1 = (np.asarray(p, dtype=float) for p in segment)
    t = np.linspace(0.0, 1.0, steps + 1)
    X = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    v = fld.values(X)
    h = float(np.linalg.norm(p1 - p0)) / steps
    jump = np.abs(np.diff(v))
    hit = np.flatnonzero(jump > lipschitz * h)
    return [(float(0.5 * (t[k] + t[k + 1])), float(jump[k])) for k in hit]


def random_segments(p: Polytope, count: int, seed: int = 0, margin: float = 1e-3):
    """Random chords of the polytope, shrunk slightly so they stay interior."""
    from .polytope import sample_interior

    rng = np.random.default_rng(seed)
    pts = sample_interior(p, 2 * count, int(rng.integers(1 << 31)), margin=margin)
    return [(pts[2 * k], pts[2 * k + 1]) for k in range(count)]


@dataclass
class DescentTrace:
    points: np.ndarray
    values: np.ndarray
    terminated: str
    step: float
    jitter: int = 0
    source: str = ""
    moves: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= -1e-12))

    def rows(self):
        for k, (x, v) in enumerate(zip(self.points, self.values)):
            yield [k, *(float(c) for c in x), float(v)]

    def to_csv(self, path, *, transform=None) -> None:
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *(f"x{i}" for i in range(d)), "value"])
            for k, x, v in zip(range(len(self.points)), self.points, self.values):
                if transform is not None:
                    x = transform.invert(x)
                    v = float(transform.distance_to_original(v))
                w.writerow([k, *(repr(float(c)) for c in x), repr(float(v))])


def _reversals(moves, step: float) -> int:
    """Direction reversals between consecutive moves of at least half a step."""
    n = 0
    for u, v in zip(moves[:-1], moves[1:]):
        if min(np.linalg.norm(u), np.linalg.norm(v)) >= 0.5 * step and float(u @ v) < 0.0:
            n += 1
    return n


def trace_descent(fld, start, step: float, max_steps: int = 2000) -> DescentTrace:
    """Walk x <- x + step * grad f(x) toward larger distance.

    Stops on convergence (net displacement over the last five moves below
    step/10), on a cycle (a full-length move landing within step/10 of one of
    the last 64 points) or after ``max_steps``. A move that would leave the
    polytope ends the trace as "exited".
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step!r}")
    x = np.asarray(start, dtype=float).copy()
    inside = ExactField(getattr(fld, "polytope", None) or fld.structure.polytope)
    pts, vals, moves = [x.copy()], [float(fld.values(x[None, :])[0])], []
    state = "maxSteps"
    for _ in range(max_steps):
        g = fld.gradient(x)
        mv = step * g
        nx = x + mv
        if np.isnan(inside.values(nx[None, :])[0]):
            state = "exited"
            break
        moves.append(mv)
        x = nx
        full = np.linalg.norm(mv) >= step * (1.0 - 1e-9)
        window = np.asarray(pts[-CYCLE_WINDOW:])
        pts.append(x.copy())
        vals.append(float(fld.values(x[None, :])[0]))
        if full and len(window) > 1 and np.min(np.linalg.norm(window[:-1] - x, axis=1)) < step / 10.0:
            state = "cycled"
            break
        if len(pts) > CONVERGE_SPAN and np.linalg.norm(pts[-1] - pts[-1 - CONVERGE_SPAN]) < step / 10.0:
            state = "converged"
            break
    return DescentTrace(np.asarray(pts), np.asarray(vals), state, float(step),
                        _reversals(moves, step), getattr(fld, "name", ""), moves)


# -- curated demo scenarios (original coordinates)

@dataclass(frozen=True)
class Scenario:
    name: str
    polytope: Polytope
    start: tuple
    step: float
    epsilon: float
    max_steps: int = 600


def _polygon(vertices) -> Polytope:
    """Halfspace form of a convex polygon given by its vertices."""
    V = np.asarray(vertices, dtype=float)
    A, b = [], []
    for i in range(len(V)):
        p, q = V[i], V[(i + 1) % len(V)]
        n = np.array([q[1] - p[1], p[0] - q[0]])
        n /= np.linalg.norm(n)
        if n @ (V.mean(axis=0) - p) > 0:
            n = -n
        A.append(n)
        b.append(float(n @ p))
    return Polytope(2, A=np.array(A), b=np.array(b))


# wedge: thin isosceles triangle whose two long facets are nearly opposite
SCENARIOS = {
    "wedge": Scenario("wedge", _polygon([(0.0, 0.0), (4.0, -0.6), (4.0, 0.6)]), (2.5, 0.05), 0.01, 0.1, 2000),
    "square-loop": Scenario("square-loop", _polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
                            (0.2, 0.3), 0.01, 0.2, 2000),
}


@dataclass
class DemoResult:
    scenario: Scenario
    structure: DagStructure
    witness: DescentTrace
    blended: DescentTrace

    @property
    def witness_pathological(self) -> bool:
        return self.witness.terminated == "cycled" or self.witness.jitter >= 10

    @property
    def blended_ok(self) -> bool:
        return self.blended.terminated == "converged" and self.blended.jitter == 0

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "witness": {"terminated": self.witness.terminated, "jitter": self.witness.jitter,
                        "steps": len(self.witness.points) - 1},
            "blended": {"terminated": self.blended.terminated, "jitter": self.blended.jitter,
                        "steps": len(self.blended.points) - 1, "monotone": self.blended.monotone},
        }


def run_demo(name: str, *, seed: int = 0) -> DemoResult:
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    s = build_for(sc.polytope, sc.epsilon, seed=seed)
    start = s.transform.apply(np.asarray(sc.start, dtype=float))
    step = sc.step * s.transform.scale
    wt = trace_descent(WitnessField(s), start, step, sc.max_steps)
    bt = trace_descent(BlendedField(s), start, step, sc.max_steps)
    return DemoResult(sc, s, wt, bt)


def jump_census(fld, p: Polytope, segments: int = 100, steps: int = 200, seed: int = 0) -> int:
    """Number of random interior segments on which the field shows at least one jump."""
    return sum(1 for seg in random_segments(p, segments, seed) if scan_discontinuities(fld, seg, steps))


__all__ = [
    "BlendedField", "DemoResult", "DescentTrace", "ExactField", "SCENARIOS", "Scenario", "WitnessField",
    "jump_census", "random_segments", "run_demo", "scan_discontinuities", "trace_descent", "witness_eval",
]
