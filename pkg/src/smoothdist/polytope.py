"""H-representation polytopes, the exact boundary-distance oracle, and the
lifted/expanded bodies in R^(d+1) whose upper envelope is the distance field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from .config import DEFAULT_TOLERANCES
from .errors import EmptyInterior, NonPositiveDelta, PointOutside, UnboundedPolytope

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class Halfspace:
    """{x : a.x <= b} with a a unit outward normal."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        norm = np.linalg.norm(a)
        if abs(norm - 1.0) > DEFAULT_TOLERANCES.unit_normal:
            raise ValueError(f"halfspace normal must be unit length, got |a|={norm!r}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def slack(self, x) -> float:
        return self.b - float(self.a @ np.asarray(x, dtype=float))


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


class Polytope:
    """Bounded convex polytope {x : A x <= b} with unit-norm rows of A.

    Boundedness and a nonempty interior are checked by linear programming
    at construction unless ``validate=False``.
    """

    def __init__(self, dim: int, halfspaces: Sequence[Halfspace] | None = None, *,
                 A=None, b=None, validate: bool = True):
        if halfspaces is not None:
            A = np.array([h.a for h in halfspaces], dtype=float).reshape(-1, dim)
            b = np.array([h.b for h in halfspaces], dtype=float)
        A = np.asarray(A, dtype=float).reshape(-1, dim)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b disagree on the number of halfspaces")
        norms = np.linalg.norm(A, axis=1)
        if np.any(np.abs(norms - 1.0) > DEFAULT_TOLERANCES.unit_normal):
            raise ValueError("halfspace normals must be unit length")
        self.dim = int(dim)
        self.A = _frozen(A)
        self.b = _frozen(b)
        self._chebyshev = None
        if validate:
            check_bounded(self)
            self.chebyshev_center()

    @classmethod
    def from_unnormalized(cls, A, b, **kw) -> "Polytope":
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero normal vector in halfspace list")
        return cls(A.shape[1], A=A / norms[:, None], b=b / norms, **kw)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(a, b) for a, b in zip(self.A, self.b)]

    def slacks(self, X) -> np.ndarray:
        """Per-halfspace slacks b - A x; shape (..., n)."""
        X = np.asarray(X, dtype=float)
        return self.b - X @ self.A.T

    def contains(self, X, tol: float = DEFAULT_TOLERANCES.inside):
        return np.all(self.slacks(X) >= -tol, axis=-1)

    def chebyshev_center(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest inscribed ball (one LP)."""
        if self._chebyshev is None:
            d = self.dim
            c = np.zeros(d + 1)
            c[-1] = -1.0
            A_ub = np.hstack([self.A, np.ones((self.n, 1))])
            res = linprog(c, A_ub=A_ub, b_ub=self.b,
                          bounds=[(None, None)] * d + [(0, None)], method="highs")
            if res.status == 3:
                raise UnboundedPolytope("Chebyshev LP unbounded")
            if res.status != 0:
                raise EmptyInterior(f"Chebyshev LP failed: {res.message}")
            r = float(res.x[-1])
            if r <= DEFAULT_TOLERANCES.geometric:
                raise EmptyInterior("polytope has empty interior")
            self._chebyshev = (_frozen(res.x[:d]), r)
        return self._chebyshev

    def vertices(self) -> np.ndarray:
        center, _ = self.chebyshev_center()
        if self.dim == 1:
            a = self.A[:, 0]
            hi = np.min(self.b[a > 0] / a[a > 0])
            lo = np.max(self.b[a < 0] / a[a < 0])
            return np.array([[lo], [hi]])
        hs = np.hstack([self.A, -self.b[:, None]])
        return HalfspaceIntersection(hs, np.asarray(center)).intersections

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.dim <= 3 and self.n <= 128:
            V = self.vertices()
            return V.min(axis=0), V.max(axis=0)
        lo = np.array([-support(self, -e) for e in np.eye(self.dim)])
        hi = np.array([support(self, e) for e in np.eye(self.dim)])
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "halfspaces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.A, self.b)],
        }

    @classmethod
    def from_dict(cls, data: dict, **kw) -> "Polytope":
        dim = int(data["dim"])
        hs = data["halfspaces"]
        A = np.array([h["a"] for h in hs], dtype=float).reshape(-1, dim)
        b = np.array([h["b"] for h in hs], dtype=float)
        return cls.from_unnormalized(A, b, **kw)

    def __repr__(self):
        return f"Polytope(dim={self.dim}, n={self.n})"


def support(p: Polytope, u) -> float:
    """max_{x in p} u.x via one LP."""
    u = np.asarray(u, dtype=float)
    res = linprog(-u, A_ub=p.A, b_ub=p.b, bounds=[(None, None)] * p.dim, method="highs")
    if res.status == 3:
        raise UnboundedPolytope(f"unbounded in direction {u.tolist()}")
    if res.status != 0:
        raise EmptyInterior(f"support LP failed: {res.message}")
    return float(-res.fun)


def check_bounded(p: Polytope) -> None:
    for e in np.vstack([np.eye(p.dim), -np.eye(p.dim)]):
        support(p, e)


def diameter(p: Polytope, *, directions: int = 1000, seed: int = 0) -> float:
    """Exact via vertices for d <= 3 and n <= 128, else support-width sampling."""
    if p.dim == 1 or (p.dim <= 3 and p.n <= 128):
        V = p.vertices()
        return float(pdist(V).max()) if len(V) > 1 else 0.0
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((directions, p.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return max(support(p, u) + support(p, -u) for u in U)


@dataclass(frozen=True, eq=False)
class NormalizationTransform:
    """y = scale * (x + translation)."""

    scale: float
    translation: np.ndarray

    def apply(self, x) -> np.ndarray:
        return self.scale * (np.asarray(x, dtype=float) + self.translation)

    def invert(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) / self.scale - self.translation

    def distance_to_original(self, value):
        return np.asarray(value) / self.scale

    def to_dict(self) -> dict:
        return {"scale": float(self.scale), "translation": np.asarray(self.translation).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationTransform":
        return cls(float(data["scale"]), _frozen(data["translation"]))

    @classmethod
    def identity(cls, dim: int) -> "NormalizationTransform":
        return cls(1.0, _frozen(np.zeros(dim)))


def normalize(p: Polytope) -> tuple[Polytope, NormalizationTransform]:
    """Rescale to unit diameter with the Chebyshev center at the origin."""
    center, _ = p.chebyshev_center()
    diam = diameter(p)
    if diam <= 0:
        raise EmptyInterior("zero diameter")
    scale = 1.0 / diam
    transform = NormalizationTransform(scale, _frozen(-center))
    b = scale * (p.b - p.A @ center)
    return Polytope(p.dim, A=p.A, b=b), transform


def exact_boundary_distance(p: Polytope, x, tol: float = DEFAULT_TOLERANCES.inside):
    """min_j (b_j - a_j.x); exact for interior points. Accepts a batch of points."""
    s = p.slacks(x)
    dmin = s.min(axis=-1)
    if np.any(dmin < -tol):
        raise PointOutside("query point lies outside the polytope")
    return dmin


def boundary_distance_signed(p: Polytope, x) -> np.ndarray:
    """min slack without the containment check; negative outside."""
    return p.slacks(x).min(axis=-1)


class LiftedBody:
    """Hypograph body in R^(d+1): z <= b_j - a_j.x + delta, plus z >= 0 when grounded."""

    def __init__(self, base: Polytope, *, delta: float = 0.0, has_ground: bool = True):
        if delta < 0:
            raise NonPositiveDelta("expansion must be non-negative")
        self.base = base
        self.delta = float(delta)
        self.has_ground = bool(has_ground)
        d = base.dim
        self.dim = d + 1
        normals = np.hstack([base.A, np.ones((base.n, 1))]) / _SQRT2
        offsets = (base.b + self.delta) / _SQRT2
        if self.has_ground:
            ground = np.zeros((1, d + 1))
            ground[0, -1] = -1.0
            normals = np.vstack([normals, ground])
            offsets = np.append(offsets, 0.0)
        self.A = _frozen(normals)
        self.b = _frozen(offsets)

    @property
    def upper_halfspaces(self) -> list[Halfspace]:
        n = self.base.n
        return [Halfspace(a, b) for a, b in zip(self.A[:n], self.b[:n])]

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(a, b) for a, b in zip(self.A, self.b)]

    def slacks(self, Y) -> np.ndarray:
        return self.b - np.asarray(Y, dtype=float) @ self.A.T

    def vertical_slacks(self, Y) -> np.ndarray:
        """b_j + delta - a_j.x - z per upper halfspace."""
        Y = np.asarray(Y, dtype=float)
        return self.base.b + self.delta - Y[..., :-1] @ self.base.A.T - Y[..., -1:]

    def contains(self, Y, tol: float = DEFAULT_TOLERANCES.inside):
        return np.all(self.slacks(Y) >= -tol, axis=-1)

    def __repr__(self):
        return f"LiftedBody(dim={self.dim}, delta={self.delta}, ground={self.has_ground})"


def lift(p: Polytope) -> LiftedBody:
    return LiftedBody(p, delta=0.0, has_ground=True)


def expand(body: LiftedBody, delta: float) -> LiftedBody:
    """Raise every upper halfspace by delta and drop the ground plane."""
    if not delta > 0:
        raise NonPositiveDelta(f"delta must be positive, got {delta!r}")
    return LiftedBody(body.base, delta=body.delta + delta, has_ground=False)


def ray_up_distance(body: LiftedBody, q, tol: float = DEFAULT_TOLERANCES.inside):
    """Length of the upward vertical ray from q to the upper envelope."""
    q = np.asarray(q, dtype=float)
    if np.any(body.slacks(q) < -tol):
        raise PointOutside("point lies outside the lifted body")
    return body.vertical_slacks(q).min(axis=-1)


# ---------------------------------------------------------------------------
# construction helpers and sampling

def box(lo: Iterable[float], hi: Iterable[float]) -> Polytope:
    lo = np.asarray(list(lo), dtype=float)
    hi = np.asarray(list(hi), dtype=float)
    d = lo.size
    A = np.vstack([np.eye(d), -np.eye(d)])
    b = np.concatenate([hi, -lo])
    return Polytope(d, A=A, b=b)


def unit_square() -> Polytope:
    return box([0.0, 0.0], [1.0, 1.0])


def simplex_triangle() -> Polytope:
    return Polytope.from_unnormalized([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])


def regular_polygon(k: int, inradius: float = 1.0) -> Polytope:
    ang = 2 * np.pi * np.arange(k) / k
    A = np.column_stack([np.cos(ang), np.sin(ang)])
    return Polytope(2, A=A, b=np.full(k, inradius))


def random_polytope(dim: int, n: int, seed: int = 0, *, jitter: float = 0.35) -> Polytope:
    """Random tangential polytope around the unit ball; retried until bounded."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        A = rng.standard_normal((n, dim))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        b = 1.0 - jitter * rng.random(n)
        try:
            return Polytope(dim, A=A, b=b)
        except (UnboundedPolytope, EmptyInterior):
            continue
    raise UnboundedPolytope("could not draw a bounded random polytope")


def load_polytope(path) -> Polytope:
    with open(path, "r", encoding="utf-8") as fh:
        return Polytope.from_dict(json.load(fh))


def save_polytope(p: Polytope, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), indent=1) + "\n", encoding="utf-8")


def sample_interior(p: Polytope, count: int, seed: int = 0, *, margin: float = 0.0) -> np.ndarray:
    """Scrambled-Sobol points inside p (rejection from the bounding box)."""
    lo, hi = p.bounding_box()
    sampler = qmc.Sobol(p.dim, scramble=True, seed=seed)
    out = []
    have = 0
    batch = max(64, 1 << int(math.ceil(math.log2(max(count, 2)))))
    while have < count:
        U = sampler.random(batch)
        X = lo + U * (hi - lo)
        X = X[np.min(p.slacks(X), axis=1) > margin]
        out.append(X)
        have += len(X)
    return np.vstack(out)[:count]


def sample_boundary(p: Polytope, count: int, seed: int = 0) -> np.ndarray:
    """Boundary points by shooting random rays from the Chebyshev center."""
    rng = np.random.default_rng(seed)
    center, _ = p.chebyshev_center()
    U = rng.standard_normal((count, p.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    rate = U @ p.A.T
    slack = p.b - p.A @ center
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rate > 0, slack / rate, np.inf)
    return center + U * t.min(axis=1)[:, None]
