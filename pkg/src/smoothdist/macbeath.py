"""Macbeath regions, their inscribed ellipsoids, and ellipsoid predicates.

Ellipsoids are stored as (c, M) meaning {x : (x - c)^T M (x - c) <= 1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import HalfspaceIntersection

from . import kernels
from .config import DEFAULT_TOLERANCES
from .errors import DegenerateRegion, NonPositiveLambda, PointNotInterior, SolverFailure
from .polytope import Halfspace

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _sym(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    c: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        M = np.array(self.M, dtype=float)
        if M.shape != (c.size, c.size):
            raise ValueError(f"shape matrix {M.shape} does not match center of size {c.size}")
        if np.max(np.abs(M - M.T), initial=0.0) > DEFAULT_TOLERANCES.symmetry * max(1.0, np.abs(M).max()):
            raise ValueError("shape matrix is not symmetric")
        M = _sym(M)
        if not np.all(np.isfinite(M)) or np.linalg.eigvalsh(M)[0] <= 0:
            raise ValueError("shape matrix is not positive definite")
        c.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "M", M)

    @property
    def dim(self) -> int:
        return self.c.size

    def f(self, x) -> np.ndarray:
        u = np.asarray(x, dtype=float) - self.c
        return np.einsum("...i,ij,...j->...", u, self.M, u)

    def radii(self) -> np.ndarray:
        """Semi-axis lengths, ascending."""
        return np.sort(1.0 / np.sqrt(np.linalg.eigvalsh(self.M)))

    @property
    def bounding_radius(self) -> float:
        return float(1.0 / math.sqrt(np.linalg.eigvalsh(self.M)[0]))

    def volume_factor(self) -> float:
        """det(M)^(-1/2), proportional to the volume."""
        return float(np.exp(-0.5 * np.linalg.slogdet(self.M)[1]))

    def boundary_samples(self, count: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        U = rng.standard_normal((count, self.dim))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        L = np.linalg.cholesky(self.M)
        # x = c + L^-T u satisfies (x-c)^T M (x-c) = |u|^2
        return self.c + np.linalg.solve(L.T, U.T).T

    def to_dict(self) -> dict:
        return {"center": self.c.tolist(), "shape": self.M.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Ellipsoid":
        return cls(np.asarray(data["center"]), np.asarray(data["shape"]))


@dataclass(frozen=True, eq=False)
class MacbeathRegion:
    """x + lam((K - x) n (x - K)) as slabs |a_j.(y - x)| <= lam * s_j."""

    center: np.ndarray
    lam: float
    A: np.ndarray
    slacks: np.ndarray

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def widths(self) -> np.ndarray:
        return self.lam * self.slacks

    @property
    def halfspaces(self) -> list[Halfspace]:
        out = []
        for a, w in zip(self.A, self.widths):
            off = float(a @ self.center)
            out.append(Halfspace(a, off + w))
            out.append(Halfspace(-a, -off + w))
        return out

    def G(self) -> np.ndarray:
        """Rows a_j / (lam s_j): the region is {y : |G (y - x)| <= 1}."""
        return self.A / self.widths[:, None]

    def contains(self, Y, tol: float = DEFAULT_TOLERANCES.geometric):
        V = (np.asarray(Y, dtype=float) - self.center) @ self.A.T
        return np.all(np.abs(V) <= self.widths + tol, axis=-1)

    def vertices(self) -> np.ndarray:
        D = self.dim
        if D == 1:
            w = (self.widths / np.abs(self.A[:, 0])).min()
            return self.center + np.array([[-w], [w]])
        hs = np.vstack([np.hstack([self.A, -(self.A @ self.center + self.widths)[:, None]]),
                        np.hstack([-self.A, (self.A @ self.center - self.widths)[:, None]])])
        return HalfspaceIntersection(hs, self.center).intersections

    def scaled(self, lam: float) -> "MacbeathRegion":
        if not lam > 0:
            raise NonPositiveLambda(f"lambda must be positive, got {lam!r}")
        return MacbeathRegion(self.center, float(lam), self.A, self.slacks)


def macbeath_region(body, x, lam: float) -> MacbeathRegion:
    """Macbeath region of ``body`` (Polytope or LiftedBody) at x, scaled by lam."""
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam!r}")
    x = np.asarray(x, dtype=float)
    s = body.b - body.A @ x
    if np.any(s <= 0):
        raise PointNotInterior("Macbeath region needs a strictly interior center")
    return MacbeathRegion(x, float(lam), body.A, s)


def inscribed_ellipsoid(region: MacbeathRegion, *, tol: float | None = None,
                        max_iter: int = 20000) -> Ellipsoid:
    """Max-volume ellipsoid centered at the region's center.

    ``tol`` is the target relative volume error.
    """
    if np.any(region.widths <= DEFAULT_TOLERANCES.geometric):
        raise DegenerateRegion("a slab of the Macbeath region has (near) zero width")
    M, _, _ = solve_inscribed_shape(region.G(), tol=tol, max_iter=max_iter)
    return Ellipsoid(region.center, M)


def solve_inscribed_shape(G, *, tol: float | None = None, max_iter: int = 20000):
    G = np.asarray(G, dtype=float)
    n, D = G.shape
    if np.linalg.matrix_rank(G) < D:
        raise DegenerateRegion("slab normals do not span the space; region is unbounded")
    if tol is None:
        tol = DEFAULT_TOLERANCES.mvee_volume
    # (1 + e)^(D/2) - 1 <= tol on the volume
    M, kmax, it = kernels.inscribed_shape(G, 2.0 * tol / D, max_iter)
    if not np.all(np.isfinite(M)) or kmax / D - 1.0 > 2.0 * tol / D * 10:
        raise SolverFailure(f"inscribed ellipsoid did not converge (kappa/D - 1 = {kmax / D - 1:.3g})")
    return _sym(M), kmax, it


def scale_ellipsoid(e: Ellipsoid, lam: float) -> Ellipsoid:
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam!r}")
    return Ellipsoid(e.c, e.M / (lam * lam))


def ellipsoid_contains(e: Ellipsoid, x) -> tuple[bool, float]:
    f = float(e.f(x))
    return f <= 1.0, f


def intersection_measure(c1, M1, c2, M2, bound: float = math.inf) -> np.ndarray:
    """Batched separation value t^2; the ellipsoids meet iff t^2 <= 1.

    t^2 = max over s in [0,1] of v^T [A1^-1/(1-s) + A2^-1/s]^-1 v. With a
    finite ``bound`` the search may stop once t^2 > bound is certain.
    """
    c1, c2 = np.asarray(c1, dtype=float), np.asarray(c2, dtype=float)
    M1, M2 = np.asarray(M1, dtype=float), np.asarray(M2, dtype=float)
    D = c1.shape[-1]
    batch = np.broadcast_shapes(c1.shape[:-1], c2.shape[:-1], M1.shape[:-2], M2.shape[:-2])
    flat = [np.ascontiguousarray(np.broadcast_to(a, batch + a.shape[a.ndim - k:]).reshape((-1,) + a.shape[a.ndim - k:]))
            for a, k in ((c1, 1), (M1, 2), (c2, 1), (M2, 2))]
    out = kernels.intersection_t2(*flat, bound)
    return out.reshape(batch) if batch else float(out[0])


def ellipsoids_intersect(e1: Ellipsoid, e2: Ellipsoid, tol: float = DEFAULT_TOLERANCES.intersect) -> bool:
    return bool(intersection_measure(e1.c, e1.M, e2.c, e2.M, 1.0 + tol) <= 1.0 + tol)


def ellipsoids_intersect_batch(c1, M1, c2, M2, tol: float = DEFAULT_TOLERANCES.intersect) -> np.ndarray:
    return intersection_measure(c1, M1, c2, M2, 1.0 + tol) <= 1.0 + tol


def line_hit(c, M, x):
    """Batched vertical-line intersection; returns (z_low, z_high), nan when missed."""
    c = np.asarray(c, dtype=float)
    M = np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    u = x - c[..., :d]
    bq = np.einsum("...i,...i->...", M[..., :d, d], u)
    cq = np.einsum("...i,...ij,...j->...", u, M[..., :d, :d], u) - 1.0
    a = M[..., d, d]
    disc = bq * bq - a * cq
    with np.errstate(invalid="ignore"):
        r = np.sqrt(disc)
    lo = np.where(disc >= 0, c[..., d] + (-bq - r) / a, np.nan)
    hi = np.where(disc >= 0, c[..., d] + (-bq + r) / a, np.nan)
    return lo, hi


def ellipsoid_vertical_line_hit(e: Ellipsoid, x) -> tuple[float, float] | None:
    lo, hi = line_hit(e.c, e.M, x)
    if np.isnan(lo):
        return None
    return float(lo), float(hi)


def projected_shape(M) -> np.ndarray:
    """Schur complement M_xx - M_xz M_zz^-1 M_zx (drops the last coordinate)."""
    M = np.asarray(M, dtype=float)
    Mxz = M[..., :-1, -1]
    return _sym(M[..., :-1, :-1] - Mxz[..., :, None] * Mxz[..., None, :] / M[..., -1, -1][..., None, None])


def project_ellipsoid(e: Ellipsoid) -> Ellipsoid:
    return Ellipsoid(e.c[:-1], projected_shape(e.M))


def max_quadratic_on_ellipsoid(inner: Ellipsoid, outer: Ellipsoid) -> float:
    """max of outer.f over inner (trust-region subproblem, solved exactly).

    inner is contained in outer iff the result is <= 1.
    """
    R = np.linalg.cholesky(inner.M)
    L = np.linalg.inv(R).T  # x = c + L u maps the unit ball onto inner
    w = inner.c - outer.c
    H = _sym(L.T @ outer.M @ L)
    g = L.T @ outer.M @ w
    k = float(w @ outer.M @ w)
    h, V = np.linalg.eigh(H)
    gam2 = (V.T @ g) ** 2
    top = h[-1]

    def phi(mu):
        return np.sum(gam2 / (mu - h) ** 2)

    scale = max(1.0, abs(top))
    lo = top + 1e-15 * scale
    if gam2[-1] <= 1e-30 and phi(lo) <= 1.0:
        mu = top  # hard case
    else:
        hi = top + math.sqrt(gam2.sum()) + 1e-12
        while phi(hi) > 1.0:
            hi = top + 2.0 * (hi - top)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if phi(mid) > 1.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * scale:
                break
        mu = hi
    mask = mu - h > 0
    return float(mu + np.sum(gam2[mask] / (mu - h[mask])) + k)


def ellipsoid_in_ellipsoid(inner: Ellipsoid, outer: Ellipsoid, tol: float = DEFAULT_TOLERANCES.geometric) -> bool:
    return max_quadratic_on_ellipsoid(inner, outer) <= 1.0 + tol
