"""Layered Delone sets of Macbeath ellipsoids and the ray-shooting DAG.

Level l holds a maximal packing of points of the lifted body whose
ellipsoids are taken w.r.t. the body expanded by delta_l = 2^l eps. Nodes
link to the next level down when their covering ellipsoids meet. Level-0
ellipsoids that reach the upper envelope become blending patches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import kernels
from .blend import Patch
from .config import BuildConfig, SampleCounts, Tolerances
from .errors import CoverageFailure, EmptyPatchList, OutsidePolytope, SolverFailure
from .macbeath import Ellipsoid, ellipsoids_intersect_batch, intersection_measure, projected_shape
from .polytope import LiftedBody, NormalizationTransform, Polytope, expand, lift

FORMAT_VERSION = 1
MAX_LEVELS = 48
MAX_PROBE_ROUNDS = 64
# probes sit this far outside the covering scale
PROBE_SCALE = 1.05
# surface probes per top node grow with the dimension of the projected shell
SURFACE_PROBE_FACTOR = 4
# BAND_FACTOR extra envelope samples per base sample, within BAND_WIDTH of the boundary (radially)
BAND_FACTOR = 2.0
BAND_WIDTH = 0.1


@dataclass(frozen=True, eq=False)
class DelonePoint:
    x: np.ndarray
    covering: Ellipsoid
    packing: Ellipsoid
    half_covering: Ellipsoid


@dataclass(frozen=True, eq=False)
class DagNode:
    index: int
    level: int
    point: DelonePoint
    children: tuple
    is_top: bool
    rep_index: int | None


class _Grow:
    """Append-only float array with amortized doubling."""

    def __init__(self, shape_tail):
        self.tail = tuple(shape_tail)
        self.buf = np.empty((64,) + self.tail)
        self.n = 0

    def append(self, row):
        if self.n == len(self.buf):
            self.buf = np.concatenate([self.buf, np.empty_like(self.buf)])
        self.buf[self.n] = row
        self.n += 1

    @property
    def view(self):
        return self.buf[: self.n]


@dataclass
class DeloneSet:
    """Centers and unit-scale inscribed shapes (ellipsoid of M^1) of one level."""

    centers: np.ndarray
    shapes1: np.ndarray
    lambda_c: float
    lambda_p: float
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.centers)

    def shapes(self, lam: float) -> np.ndarray:
        return self.shapes1 / (lam * lam)

    def radii(self, lam: float) -> np.ndarray:
        return lam / np.sqrt(np.linalg.eigvalsh(self.shapes1)[:, 0])

    def point(self, i: int) -> DelonePoint:
        c = self.centers[i]
        return DelonePoint(c, Ellipsoid(c, self.shapes(self.lambda_c)[i]),
                           Ellipsoid(c, self.shapes(self.lambda_p)[i]),
                           Ellipsoid(c, self.shapes(0.5 * self.lambda_c)[i]))


def _sobol_lift(p: Polytope, count: int, rng, surface: bool) -> np.ndarray:
    d = p.dim
    lo, hi = p.bounding_box()
    sampler = qmc.Sobol(d + 1, scramble=True, seed=rng)
    out, have = [], 0
    m = max(6, int(math.ceil(math.log2(max(count, 2)))) + 1)
    while have < count:
        # keep the running total a power of two
        U = sampler.random_base2(m if sampler.num_generated == 0 else int(math.log2(sampler.num_generated)))
        X = lo + U[:, :d] * (hi - lo)
        dist = (p.b - X @ p.A.T).min(axis=1)
        ok = dist > 0
        z = dist[ok] if surface else U[ok, d] * dist[ok]
        out.append(np.hstack([X[ok], z[:, None]]))
        have += int(ok.sum())
    return np.vstack(out)[:count]


def lifted_samples(p: Polytope, count: int, seed) -> np.ndarray:
    """Quasi-random points of the lifted body: first half on the envelope z = d(x),
    second half spread through the volume. The two halves use independent streams
    (splitting one Sobol stream by index parity correlates with its digit structure)."""
    rng = np.random.default_rng(seed)
    ns = (count + 1) // 2
    return np.vstack([_sobol_lift(p, ns, rng, True), _sobol_lift(p, count - ns, rng, False)])


def surface_mask(count: int) -> np.ndarray:
    return np.arange(count) < (count + 1) // 2


def band_samples(p: Polytope, count: int, seed, width: float = BAND_WIDTH) -> np.ndarray:
    """Envelope points crowded toward the boundary of Omega.

    Uniform samples leave the thin band along the boundary nearly empty; these
    are uniform points slid outward from the Chebyshev center to a random
    fraction in [1 - width, 1] of the way to the boundary (biased to the outer end).
    """
    rng = np.random.default_rng(seed)
    c, _ = p.chebyshev_center()
    X = _sobol_lift(p, count, rng, True)[:, :-1]
    D = X - c
    rate = D @ p.A.T
    room = p.b - c @ p.A.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rate > 0, room / rate, np.inf).min(axis=1)
    u = rng.random(len(X))
    Xb = c + (t * (1.0 - width * u * u))[:, None] * D
    dist = (p.b - Xb @ p.A.T).min(axis=1)
    ok = dist > 0
    return np.hstack([Xb[ok], dist[ok, None]])


def build_samples(p: Polytope, count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniform lifted samples plus a boundary band of envelope points, with the surface mask."""
    Y = lifted_samples(p, count, seed)
    B = band_samples(p, max(1, int(count * BAND_FACTOR)), [*np.atleast_1d(seed).tolist(), 17])
    return np.vstack([Y, B]), np.concatenate([surface_mask(count), np.ones(len(B), dtype=bool)])


def _flat_pairs(lists):
    lens = np.array([len(l) for l in lists], dtype=np.int64)
    owner = np.repeat(np.arange(len(lists), dtype=np.int64), lens)
    if lens.sum() == 0:
        return owner, np.zeros(0, dtype=np.int64)
    flat = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists if len(l)])
    return owner, flat


def _radius_buckets(r) -> list[np.ndarray]:
    r = np.asarray(r, dtype=float)
    key = np.floor(np.log2(np.maximum(r, 1e-300) / max(float(r.max()), 1e-300))).clip(-8, 0).astype(np.int64)
    return [np.flatnonzero(key == k) for k in np.unique(key)]


def _ball_pairs(Cu, ru, Cl, rl):
    """All (i, j) with |Cu_i - Cl_j| <= ru_i + rl_j, sorted by (i, j).

    Both sides are bucketed by radius so each tree pass uses a near-tight bound.
    """
    if len(Cl) == 0 or len(Cu) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    owners, flats = [], []
    lower = [(m, cKDTree(Cl[m]), float(rl[m].max())) for m in _radius_buckets(rl)]
    for mu in _radius_buckets(ru):
        tu, rmax = cKDTree(Cu[mu]), float(ru[mu].max())
        for ml, tl, lmax in lower:
            hits = tu.sparse_distance_matrix(tl, rmax + lmax, output_type="ndarray")
            if len(hits) == 0:
                continue
            i, j = mu[hits["i"]], ml[hits["j"]]
            ok = hits["v"] <= ru[i] + rl[j]
            owners.append(i[ok])
            flats.append(j[ok])
    if not owners:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    owner, flat = np.concatenate(owners).astype(np.int64), np.concatenate(flats).astype(np.int64)
    order = np.lexsort((flat, owner))
    return owner[order], flat[order]


def _separated(c1, Si1, c2, Si2, slack: float = 1e-9) -> np.ndarray:
    """Sufficient test that ellipsoids {(y-c)^T Si^-1 (y-c) <= 1} are disjoint.

    Si are the inverse shapes. Checks the bounding boxes and the projections
    onto the line through the centers.
    """
    h1 = np.sqrt(np.einsum("kii->ki", Si1))
    h2 = np.sqrt(np.einsum("kii->ki", Si2))
    u = c2 - c1
    box = np.any(np.abs(u) > (h1 + h2) * (1.0 + slack), axis=1)
    w1 = np.sqrt(np.einsum("ki,kij,kj->k", u, Si1, u))
    w2 = np.sqrt(np.einsum("ki,kij,kj->k", u, Si2, u))
    return box | (np.einsum("ki,ki->k", u, u) > (w1 + w2) * (1.0 + slack))


class _Samples:
    """Sample points with the two coverage requirements tracked separately.

    Every point must lie in some lam_c covering ellipsoid. Envelope points
    must also have their x inside the projected (lam_c / sqrt 2)-ellipsoid of
    some node that reaches the envelope, so that f_i(x) <= 1/2 for a patch.
    """

    def __init__(self, Y, surface):
        self.Y = Y
        self.d = Y.shape[1] - 1
        self.surf_idx = np.flatnonzero(surface)
        self.need_vol = np.ones(len(Y), dtype=bool)
        self.need_proj = np.asarray(surface, dtype=bool).copy()
        self.tree = cKDTree(Y)
        self.tree_x = cKDTree(Y[self.surf_idx, : self.d]) if self.surf_idx.size else None

    @property
    def covered(self):
        return ~(self.need_vol | self.need_proj)

    def mark_one(self, y, M1, top: bool, lam_c, rho):
        """Single-node fast path of mark_batch."""
        lv = rho * lam_c
        idx = np.asarray(self.tree.query_ball_point(y, lv / math.sqrt(np.linalg.eigvalsh(M1)[0])), dtype=np.int64)
        if idx.size:
            U = self.Y[idx] - y
            self.need_vol[idx[np.einsum("ki,ij,kj->k", U, M1, U) <= lv * lv]] = False
        if top and self.tree_x is not None:
            ls = rho * lam_c / math.sqrt(2.0)
            P1 = projected_shape(M1[None])[0]
            x = y[: self.d]
            idx = np.asarray(self.tree_x.query_ball_point(x, ls / math.sqrt(np.linalg.eigvalsh(P1)[0])), dtype=np.int64)
            if idx.size:
                U = self.Y[self.surf_idx[idx], : self.d] - x
                self.need_proj[self.surf_idx[idx[np.einsum("ki,ij,kj->k", U, P1, U) <= ls * ls]]] = False

    def mark_batch(self, C, S1, top, lam_c, rho):
        """Mark coverage by nodes (C, S1) at scale rho (rho < 1 leaves a margin)."""
        lv = rho * lam_c
        rv = lv / np.sqrt(np.linalg.eigvalsh(S1)[:, 0])
        for sl in _chunks(len(C)):
            owner, flat = _flat_pairs(self.tree.query_ball_point(C[sl], rv[sl]))
            hit = _inside(self.Y[flat] - C[sl][owner], S1[sl], owner, lv * lv)
            self.need_vol[flat[hit]] = False
        ti = np.flatnonzero(top)
        if ti.size and self.tree_x is not None:
            ls = rho * lam_c / math.sqrt(2.0)
            P1 = projected_shape(S1[ti])
            rp = ls / np.sqrt(np.linalg.eigvalsh(P1)[:, 0])
            Cx = C[ti, : self.d]
            for sl in _chunks(len(ti)):
                owner, flat = _flat_pairs(self.tree_x.query_ball_point(Cx[sl], rp[sl]))
                hit = _inside(self.Y[self.surf_idx[flat], : self.d] - Cx[sl][owner], P1[sl], owner, ls * ls)
                self.need_proj[self.surf_idx[flat[hit]]] = False


def _covered(P, C, S, bound: float, k: int = 8) -> np.ndarray:
    """True where some (p - c)^T S (p - c) <= bound.

    The k nearest centers settle almost every point; the rest are checked
    against every center within the largest bounding radius, so the answer is exact.
    """
    n = len(C)
    if n == 0 or len(P) == 0:
        return np.zeros(len(P), dtype=bool)
    tree = cKDTree(C)
    k = min(k, n)
    _, nb = tree.query(P, k=k)
    nb = np.asarray(nb, dtype=np.int64).reshape(len(P), k)
    out = kernels.quad_any(P, C, S, np.arange(0, k * len(P) + 1, k, dtype=np.int64), nb.ravel(), bound)
    rest = np.flatnonzero(~out)
    if rest.size:
        r = np.sqrt(bound / np.linalg.eigvalsh(S)[:, 0])
        owner, flat = _ball_pairs(P[rest], np.zeros(rest.size), C, r)
        ptr = np.searchsorted(owner, np.arange(rest.size + 1)).astype(np.int64)
        out[rest] = kernels.quad_any(P[rest], C, S, ptr, flat, bound)
    return out


def _pull_inside(p: Polytope, C, X, margin: float = 1e-9) -> np.ndarray:
    """Move each X_k along the segment from C_k until it has slack >= margin.

    Points already inside are returned unchanged; C_k must be interior.
    """
    D = X - C
    rate = D @ p.A.T
    room = (p.b - margin) - C @ p.A.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rate > 0, room / rate, np.inf).min(axis=1)
    t = np.clip(t, 0.0, 1.0)
    return C + t[:, None] * D


def _chunks(n: int, size: int = 256):
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def _inside(U, S, owner, bound):
    """(U_k)^T S[owner_k] U_k <= bound, without materializing S[owner]."""
    f = np.empty(len(U))
    if len(U) == 0:
        return f.astype(bool)
    # owner is sorted, so rows of one ellipsoid are contiguous
    cuts = np.flatnonzero(np.diff(owner)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(U)]])
    for a, b in zip(starts.tolist(), ends.tolist()):
        V = U[a:b]
        f[a:b] = np.einsum("ki,ij,kj->k", V, S[owner[a]], V)
    return f <= bound


class _Greedy:
    """Greedy maximal packing over an ordered candidate stream."""

    def __init__(self, body: LiftedBody, expanded: LiftedBody, lam_c: float, lam_p: float,
                 tol: Tolerances, rho: float):
        self.base = body.base
        self.A = expanded.A
        self.b = expanded.b
        self.D = expanded.dim
        self.lam_c = lam_c
        self.lam_p = lam_p
        self.rho = rho
        self.tol = tol
        self.C = _Grow((self.D,))
        self.S = _Grow((self.D, self.D))
        self.rp = _Grow(())
        self.rejected = 0
        self._tree, self._indexed, self._rp_max = None, 0, 0.0
        # per-shape solver target, see solve_inscribed_shape
        self._mvee_tol = 2.0 * tol.mvee_volume / self.D

    def shape(self, y):
        s = self.b - self.A @ y
        if np.any(s <= self.tol.geometric):
            return None
        M, kmax, _ = kernels.inscribed_shape(self.A / s[:, None], self._mvee_tol, 200000)
        if not np.all(np.isfinite(M)) or kmax / self.D - 1.0 > 10 * self._mvee_tol:
            raise SolverFailure("inscribed ellipsoid solver did not converge")
        return 0.5 * (M + M.T)

    def _near(self, y, r) -> np.ndarray:
        """Indices of accepted nodes whose packing ball may meet the ball B(y, r)."""
        C, rp = self.C.view, self.rp.view
        if self.C.n - self._indexed > 1024:
            self._tree = cKDTree(C)
            self._indexed = self.C.n
            self._rp_max = float(rp.max())
        m = self._indexed
        parts = []
        if m:
            cand = np.asarray(self._tree.query_ball_point(y, r + self._rp_max), dtype=np.int64)
            if cand.size:
                parts.append(cand[np.linalg.norm(C[cand] - y, axis=1) <= r + rp[cand]])
        tail = np.flatnonzero(np.linalg.norm(C[m:] - y, axis=1) <= r + rp[m:]) + m
        parts.append(tail)
        return np.sort(np.concatenate(parts)) if len(parts) > 1 else tail

    def packing_free(self, y, M1) -> bool:
        if self.C.n == 0:
            return True
        r = self.lam_p / math.sqrt(np.linalg.eigvalsh(M1)[0])
        C = self.C.view
        near = self._near(y, r)
        if near.size == 0:
            return True
        lp2 = self.lam_p ** 2
        t2 = intersection_measure(y, M1 / lp2, C[near], self.S.view[near] / lp2, 1.0 + self.tol.intersect)
        return not np.any(t2 <= 1.0 + self.tol.intersect)

    def accept(self, y, M1):
        self.C.append(y)
        self.S.append(M1)
        self.rp.append(self.lam_p / math.sqrt(np.linalg.eigvalsh(M1)[0]))

    def is_top(self, C, S1) -> np.ndarray:
        return reaches_envelope(self.base, C, S1 / self.lam_c ** 2)

    def run(self, smp: _Samples):
        """Consume uncovered candidates in order; updates coverage in place."""
        Y = smp.Y
        for k in range(len(Y)):
            if not (smp.need_vol[k] or smp.need_proj[k]):
                continue
            y = Y[k]
            M1 = self.shape(y)
            if M1 is None or not self.packing_free(y, M1):
                # covered by proximity
                smp.need_vol[k] = smp.need_proj[k] = False
                self.rejected += 1
                continue
            self.accept(y, M1)
            smp.mark_one(y, M1, bool(self.is_top(y[None, :], M1[None])[0]), self.lam_c, self.rho)
            smp.need_vol[k] = smp.need_proj[k] = False

    def hard_misses(self, Y, surface) -> int:
        """Envelope samples whose x lies in no projected top ellipsoid (f < 1)."""
        C, S = self.C.view, self.S.view
        top = np.flatnonzero(self.is_top(C, S))
        idx = np.flatnonzero(surface)
        if top.size == 0:
            return int(idx.size)
        d = Y.shape[1] - 1
        lam = self.lam_c
        return int((~_covered(Y[idx, :d], C[top, :d], projected_shape(S[top]), lam * lam * (1.0 - 1e-9))).sum())

    def probes(self, lo: int, hi: int, per: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Points just outside the boundaries of nodes lo..hi-1, inside Omega-hat.

        Holes in the union of covering ellipsoids border some ellipsoid, so
        these probes find them at a density that follows the local scale.
        """
        p = self.base
        d = p.dim
        C = self.C.view[lo:hi]
        S = self.S.view[lo:hi] / (self.lam_c * PROBE_SCALE) ** 2
        U = rng.standard_normal((len(C), per, self.D))
        U /= np.linalg.norm(U, axis=2, keepdims=True)
        L = np.linalg.cholesky(S)
        V = (C[:, None, :] + np.linalg.solve(np.swapaxes(L, 1, 2)[:, None], U[..., None])[..., 0]).reshape(-1, self.D)
        dist = (p.b - V[:, :d] @ p.A.T).min(axis=1)
        # clamp the height into [0, d(x)] so gaps against the ground or the roof are seen
        ok = dist > 0
        vol = V[ok]
        vol[:, d] = np.clip(vol[:, d], 0.0, dist[ok])
        top = np.flatnonzero(self.is_top(C, self.S.view[lo:hi]))
        surf = np.empty((0, self.D))
        if top.size:
            P = projected_shape(S[top]) * 2.0
            ps = per * SURFACE_PROBE_FACTOR ** max(0, d - 2)
            W = rng.standard_normal((top.size, ps, d))
            W /= np.linalg.norm(W, axis=2, keepdims=True)
            Lp = np.linalg.cholesky(P)
            Cx = np.repeat(C[top, :d], ps, axis=0)
            X = (C[top, None, :d] + np.linalg.solve(np.swapaxes(Lp, 1, 2)[:, None], W[..., None])[..., 0]).reshape(-1, d)
            # probes beyond the boundary of Omega slide back toward their center
            # until just inside, so holes along the boundary are still probed
            X = _pull_inside(p, Cx, X)
            dx = (p.b - X @ p.A.T).min(axis=1)
            ok = dx > 0
            surf = np.hstack([X[ok], dx[ok, None]])
        Y = np.vstack([surf, vol])
        return Y, np.arange(len(Y)) < len(surf)

    def check(self, Y, surface) -> _Samples:
        """Coverage of fresh samples at full scale."""
        smp = _Samples(Y, surface)
        C, S = self.C.view, self.S.view
        lam = self.lam_c
        smp.need_vol &= ~_covered(Y, C, S, lam * lam)
        top = np.flatnonzero(self.is_top(C, S))
        if top.size and smp.surf_idx.size:
            d = smp.d
            P1 = projected_shape(S[top])
            idx = smp.surf_idx
            smp.need_proj[idx] &= ~_covered(Y[idx, :d], C[top, :d], P1, 0.5 * lam * lam)
        return smp


def sample_budget(samples: SampleCounts, delta: float, dim: int) -> int:
    return int(max(samples.min_samples, math.ceil(samples.scale * delta ** (-(dim + 1) / 2.0))))


def build_delone_set(body: LiftedBody, expanded: LiftedBody, lambda_p: float, lambda_c: float, *,
                     seed: int = 0, level: int = 0, samples: SampleCounts | None = None,
                     tolerances: Tolerances | None = None) -> DeloneSet:
    """Greedy maximal packing of Omega-hat; covering ellipsoids cover it and the
    projected top ellipsoids at the f <= 1/2 scale cover Omega."""
    samples = samples or SampleCounts()
    tol = tolerances or Tolerances()
    p = body.base
    delta = expanded.delta - body.delta
    count = sample_budget(samples, delta, p.dim)
    greedy = _Greedy(body, expanded, lambda_c, lambda_p, tol, samples.margin)
    center, _ = p.chebyshev_center()
    anchor = np.append(center, 0.5 * float((p.b - p.A @ center).min()))
    Y, surface = build_samples(p, count, [seed, level, 0])
    Y = np.vstack([anchor, Y])
    surface = np.concatenate([[False], surface])
    greedy.run(_Samples(Y, surface))
    first = greedy.C.n
    rng = np.random.default_rng([seed, level, 1 << 20])
    lo, probe_rounds = 0, 0
    while lo < greedy.C.n and probe_rounds < MAX_PROBE_ROUNDS:
        hi = greedy.C.n
        Pts, surf = greedy.probes(lo, hi, samples.probes_per_node, rng)
        if len(Pts):
            greedy.run(greedy.check(Pts, surf))
        lo = hi
        probe_rounds += 1
    probed = greedy.C.n - first
    inserted = []
    verified = False
    for rnd in range(1, samples.verify_rounds + 2):
        Z, zs = build_samples(p, count, [seed, level, rnd])
        smp = greedy.check(Z, zs)
        missing = int((~smp.covered).sum())
        if missing == 0:
            verified = True
            break
        if rnd == samples.verify_rounds + 1:
            break
        before = greedy.C.n
        greedy.run(smp)
        inserted.append(greedy.C.n - before)
    if not verified:
        hard = greedy.hard_misses(Z, zs)
        if hard or missing > samples.residual * count:
            raise CoverageFailure(
                f"level {level}: {missing} of {count} sample points remain uncovered after "
                f"{samples.verify_rounds} insertion rounds ({hard} outside every patch)")
    stats = {"samples": int(count), "greedy": int(first), "probed": int(probed), "inserted": inserted,
             "rejected": int(greedy.rejected), "residual": 0 if verified else missing}
    return DeloneSet(greedy.C.view.copy(), greedy.S.view.copy(), lambda_c, lambda_p, stats)


def _link(upper: DeloneSet, lower: DeloneSet, lam_c: float, tol: float) -> list[np.ndarray]:
    """children[i] = sorted indices of lower-level nodes whose covering ellipsoid meets node i's."""
    ru, rl = upper.radii(lam_c), lower.radii(lam_c)
    owner, flat = _ball_pairs(upper.centers, ru, lower.centers, rl)
    Su, Sl = upper.shapes(lam_c), lower.shapes(lam_c)
    ok = ~_separated(upper.centers[owner], np.linalg.inv(Su)[owner], lower.centers[flat], np.linalg.inv(Sl)[flat])
    owner, flat = owner[ok], flat[ok]
    hit = np.zeros(len(owner), dtype=bool)
    for s in range(0, len(owner), 4096):
        sl = slice(s, s + 4096)
        hit[sl] = ellipsoids_intersect_batch(upper.centers[owner[sl]], Su[owner[sl]],
                                             lower.centers[flat[sl]], Sl[flat[sl]], tol)
    return _group(owner[hit], flat[hit], len(upper))


def _group(owner, flat, n: int) -> list[np.ndarray]:
    """Sorted, de-duplicated flat indices per owner."""
    if len(owner) == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(n)]
    key = np.unique(owner.astype(np.int64) * (int(flat.max()) + 1) + flat)
    base = int(flat.max()) + 1
    o, f = key // base, key % base
    return np.split(f.astype(np.int64), np.searchsorted(o, np.arange(1, n)))


def reaches_envelope(p: Polytope, centers, shapes, tol: float = 1e-12) -> np.ndarray:
    """True where the ellipsoid pokes through some upper facet z <= b_j - a_j.x."""
    G = np.hstack([p.A, np.ones((p.n, 1))])
    Sinv = np.linalg.inv(shapes)
    reach = np.sqrt(np.einsum("ji,kil,jl->kj", G, Sinv, G))
    top = centers @ G.T + reach - p.b
    return top.max(axis=1) >= -tol


def representative(p: Polytope, x, tie: float = 1e-12) -> int:
    """argmin slack at x, ties to the lowest index."""
    s = p.b - p.A @ np.asarray(x, dtype=float)
    return int(np.flatnonzero(s <= s.min() + tie)[0])


def _adjacency(centers, shapes, tol: float) -> list[np.ndarray]:
    n = len(centers)
    if n == 0:
        return []
    r = 1.0 / np.sqrt(np.linalg.eigvalsh(shapes)[:, 0])
    owner, flat = _ball_pairs(centers, r, centers, r)
    keep = owner < flat
    owner, flat = owner[keep], flat[keep]
    Si = np.linalg.inv(shapes)
    keep = ~_separated(centers[owner], Si[owner], centers[flat], Si[flat])
    owner, flat = owner[keep], flat[keep]
    hit = np.zeros(len(owner), dtype=bool)
    for s in range(0, len(owner), 4096):
        sl = slice(s, s + 4096)
        hit[sl] = ellipsoids_intersect_batch(centers[owner[sl]], shapes[owner[sl]],
                                             centers[flat[sl]], shapes[flat[sl]], tol)
    owner, flat = owner[hit], flat[hit]
    return _group(np.concatenate([owner, flat]), np.concatenate([flat, owner]), n)


class DagStructure:
    """Immutable query structure; all geometry in normalized coordinates."""

    def __init__(self, polytope: Polytope, transform: NormalizationTransform, config: BuildConfig,
                 centers: list, shapes: list, children: list, patch_node, patch_center, patch_shape,
                 patch_rep, adjacency: list, stats: dict | None = None):
        self.polytope = polytope
        self.transform = transform
        self.config = config
        self.epsilon = float(config.epsilon)
        self.seed = int(config.seed)
        self.lambda_c = float(config.lambda_c)
        self.lambda_p = float(config.lambda_p)
        self.centers = [np.asarray(c, dtype=float) for c in centers]
        self.shapes = [np.asarray(s, dtype=float).reshape(len(c), c.shape[1], c.shape[1])
                       for c, s in zip(self.centers, shapes)]
        self.children = children
        self.patch_node = np.asarray(patch_node, dtype=np.int64)
        self.patch_center = np.asarray(patch_center, dtype=float).reshape(-1, polytope.dim)
        self.patch_shape = np.asarray(patch_shape, dtype=float).reshape(-1, polytope.dim, polytope.dim)
        self.patch_rep = np.asarray(patch_rep, dtype=np.int64)
        self.adjacency = adjacency
        self.stats = stats or {}
        self._tables = None
        self._node_patch = np.full(len(self.centers[0]), -1, dtype=np.int64)
        self._node_patch[self.patch_node] = np.arange(len(self.patch_node))

    # -- shape of the hierarchy
    @property
    def dim(self) -> int:
        return self.polytope.dim

    @property
    def m(self) -> int:
        return len(self.centers) - 1

    @property
    def level_sizes(self) -> list[int]:
        return [len(c) for c in self.centers]

    def delta(self, level: int) -> float:
        return self.epsilon * 2.0 ** level

    @property
    def num_patches(self) -> int:
        return len(self.patch_node)

    def max_out_degree(self) -> int:
        return max((len(ch) for lvl in self.children for ch in lvl), default=0)

    def node(self, level: int, i: int) -> DagNode:
        lc = self.lambda_c
        c = self.centers[level][i]
        S = self.shapes[level][i]
        pt = DelonePoint(c, Ellipsoid(c, S), Ellipsoid(c, S * (lc / self.lambda_p) ** 2),
                         Ellipsoid(c, 4.0 * S))
        ch = tuple(int(j) for j in self.children[level][i]) if level > 0 else ()
        pid = int(self._node_patch[i]) if level == 0 else -1
        rep = int(self.patch_rep[pid]) if pid >= 0 else None
        return DagNode(self._global(level, i), level, pt, ch, pid >= 0, rep)

    def nodes(self, level: int) -> list[DagNode]:
        return [self.node(level, i) for i in range(len(self.centers[level]))]

    def _global(self, level: int, i: int) -> int:
        return int(sum(len(c) for c in self.centers[:level]) + i)

    def _local(self, g: int) -> tuple[int, int]:
        for lvl, c in enumerate(self.centers):
            if g < len(c):
                return lvl, g
            g -= len(c)
        raise IndexError("node index out of range")

    def patch(self, i: int) -> Patch:
        r = int(self.patch_rep[i])
        return Patch(self.patch_center[i], self.patch_shape[i], self.polytope.A[r],
                     float(self.polytope.b[r]), r, int(self.patch_node[i]))

    @property
    def patches(self) -> list[Patch]:
        return [self.patch(i) for i in range(self.num_patches)]

    # -- query tables for the kernels
    def query_tables(self):
        if self._tables is None:
            sizes = self.level_sizes
            offs = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            node_c = np.ascontiguousarray(np.vstack(self.centers))
            node_S = np.ascontiguousarray(np.concatenate(self.shapes))
            node_level = np.concatenate([np.full(n, l, dtype=np.int64) for l, n in enumerate(sizes)])
            ptr, idx = [0], []
            for l, n in enumerate(sizes):
                for i in range(n):
                    if l > 0:
                        idx.extend((self.children[l][i] + offs[l - 1]).tolist())
                    ptr.append(len(idx))
            node_patch = np.full(len(node_c), -1, dtype=np.int64)
            node_patch[: sizes[0]] = self._node_patch
            width = np.array([self.lambda_c * self.delta(l) * (1.0 + 1e-6) + 1e-12
                              for l in range(len(sizes))])
            aptr, aidx = [0], []
            for adj in self.adjacency:
                aidx.extend(adj.tolist())
                aptr.append(len(aidx))
            A, b = self.polytope.A, self.polytope.b
            self._tables = (
                node_c, node_S, np.array(ptr, dtype=np.int64), np.array(idx, dtype=np.int64), width,
                node_patch, node_level, int(len(node_c) - 1),
                np.ascontiguousarray(self.patch_center), np.ascontiguousarray(self.patch_shape),
                np.ascontiguousarray(A[self.patch_rep]), np.ascontiguousarray(b[self.patch_rep]),
                np.array(aptr, dtype=np.int64), np.array(aidx, dtype=np.int64),
                float(self.config.tolerances.mollifier_cutoff),
                np.ascontiguousarray(A), np.ascontiguousarray(b),
            )
        return self._tables

    def evaluate(self, Q):
        """Vectorized blended evaluation; see ``kernels.evaluate_batch``."""
        return kernels.evaluate_batch(self.query_tables(), np.atleast_2d(np.asarray(Q, dtype=float)))

    # -- persistence
    def to_dict(self) -> dict:
        levels = []
        for l, (C, S) in enumerate(zip(self.centers, self.shapes)):
            recs = []
            for i in range(len(C)):
                pid = int(self._node_patch[i]) if l == 0 else -1
                recs.append({
                    "center": C[i].tolist(),
                    "shape": S[i].reshape(-1).tolist(),
                    "level": l,
                    "children": self.children[l][i].tolist() if l > 0 else [],
                    "isTop": pid >= 0,
                    "repIndex": int(self.patch_rep[pid]) if pid >= 0 else None,
                })
            levels.append(recs)
        patches = [{
            "node": int(self.patch_node[i]),
            "center": self.patch_center[i].tolist(),
            "shape": self.patch_shape[i].reshape(-1).tolist(),
            "repIndex": int(self.patch_rep[i]),
            "adjacency": self.adjacency[i].tolist(),
        } for i in range(self.num_patches)]
        return {
            "version": FORMAT_VERSION,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "transform": self.transform.to_dict(),
            "polytope": self.polytope.to_dict(),
            "stats": self.stats,
            "levels": levels,
            "patches": patches,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DagStructure":
        if not isinstance(data, dict):
            raise ValueError("structure data must be a JSON object")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported structure version {data.get('version')!r}")
        pd = data["polytope"]
        dim = int(pd["dim"])
        A = np.array([h["a"] for h in pd["halfspaces"]], dtype=float).reshape(-1, dim)
        b = np.array([h["b"] for h in pd["halfspaces"]], dtype=float)
        poly = Polytope(dim, A=A, b=b, validate=False)
        D = dim + 1
        centers, shapes, children = [], [], []
        for recs in data["levels"]:
            centers.append(np.array([r["center"] for r in recs], dtype=float).reshape(-1, D))
            shapes.append(np.array([r["shape"] for r in recs], dtype=float).reshape(-1, D, D))
            children.append([np.array(r["children"], dtype=np.int64) for r in recs])
        P = data["patches"]
        return cls(poly, NormalizationTransform.from_dict(data["transform"]),
                   BuildConfig.from_dict(data["config"]), centers, shapes, children,
                   [r["node"] for r in P], [r["center"] for r in P],
                   [r["shape"] for r in P], [r["repIndex"] for r in P],
                   [np.array(r["adjacency"], dtype=np.int64) for r in P], data.get("stats", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DagStructure":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_dag(p: Polytope, epsilon: float, *, seed: int = 0, config: BuildConfig | None = None,
              transform: NormalizationTransform | None = None) -> DagStructure:
    """Build all levels for a normalized polytope."""
    if not (0.0 < epsilon < 0.5):
        raise ValueError(f"epsilon must lie in (0, 1/2), got {epsilon!r}")
    cfg = (config or BuildConfig(epsilon=epsilon, seed=seed)).resolved(p.dim)
    if cfg.epsilon != epsilon:
        cfg = BuildConfig(epsilon=epsilon, seed=cfg.seed, lambda_c=cfg.lambda_c,
                          lambda_p=cfg.lambda_p, tolerances=cfg.tolerances, samples=cfg.samples)
    tol = cfg.tolerances
    body = lift(p)
    sets: list[DeloneSet] = []
    for level in range(MAX_LEVELS):
        ds = build_delone_set(body, expand(body, epsilon * 2.0 ** level), cfg.lambda_p, cfg.lambda_c,
                              seed=cfg.seed, level=level, samples=cfg.samples, tolerances=tol)
        sets.append(ds)
        if len(ds) == 1:
            break
    else:
        raise CoverageFailure("hierarchy did not collapse to a single root")
    children = [[]] + [_link(sets[l], sets[l - 1], cfg.lambda_c, tol.intersect) for l in range(1, len(sets))]
    lc = cfg.lambda_c
    C0, S0 = sets[0].centers, sets[0].shapes(lc)
    top = np.flatnonzero(reaches_envelope(p, C0, S0))
    pc = C0[top, :-1]
    pS = projected_shape(S0[top])
    reps = np.array([representative(p, x) for x in pc], dtype=np.int64)
    adj = _adjacency(pc, pS, tol.intersect)
    stats = {
        "level_sizes": [len(s) for s in sets],
        "levels": [s.stats for s in sets],
        "patches": int(len(top)),
    }
    s = DagStructure(p, transform or NormalizationTransform.identity(p.dim), cfg,
                     [ds.centers for ds in sets], [ds.shapes(lc) for ds in sets], children,
                     top, pc, pS, reps, adj, stats)
    s.stats["max_out_degree"] = s.max_out_degree()
    s.stats["max_adjacency"] = max((len(a) for a in adj), default=0)
    s.stats["representative_excess"] = validate_representatives(s)
    return s


def validate_representatives(s: DagStructure, probes: int | None = None) -> float:
    """Largest v_rep(x) - d(x) over points sampled in each patch and inside Omega."""
    probes = probes or s.config.samples.rep_probe
    rng = np.random.default_rng([s.seed, 7])
    p = s.polytope
    d = p.dim
    worst = 0.0
    for i in range(s.num_patches):
        U = rng.standard_normal((probes, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        U *= rng.random((probes, 1)) ** (1.0 / d)
        L = np.linalg.cholesky(s.patch_shape[i])
        X = s.patch_center[i] + np.linalg.solve(L.T, U.T).T
        sl = p.b - X @ p.A.T
        inside = sl.min(axis=1) > 0
        if not inside.any():
            continue
        sl = sl[inside]
        gap = sl[:, s.patch_rep[i]] - sl.min(axis=1)
        worst = max(worst, float(gap.max()))
    return worst


def build_for(p: Polytope, epsilon: float, *, seed: int = 0, config: BuildConfig | None = None) -> DagStructure:
    """Normalize an arbitrary polytope and build its structure."""
    from .polytope import normalize

    q, tr = normalize(p)
    return build_dag(q, epsilon, seed=seed, config=config, transform=tr)


def descend(s: DagStructure, q):
    """(leaf node, path length, beam width) of the vertical ray through q."""
    st, leaf, p0, pl, bm, _, _ = kernels.locate(s.query_tables(), np.asarray(q, dtype=float))
    if st == kernels.STATUS_OUTSIDE:
        raise OutsidePolytope("query is outside the polytope")
    if leaf < 0:
        if p0 < 0:
            raise EmptyPatchList("no patch contains the query point")
        # beam lost the line in a cover sliver; the scan's best patch names the leaf
        return s.node(0, int(s.patch_node[p0])), int(pl), int(bm)
    return s.node(*s._local(int(leaf))), int(pl), int(bm)


def ray_shoot_descend(s: DagStructure, q) -> DagNode:
    return descend(s, q)[0]


def assign_representative(node: DagNode, structure: DagStructure) -> int:
    return representative(structure.polytope, node.point.x[:-1])


def patches_at(s: DagStructure, q, *, with_f: bool = False):
    """Patches whose shadow contains q, found from the descent leaf and its overlap list."""
    st, _, _, _, _, ids, f = kernels.locate(s.query_tables(), np.asarray(q, dtype=float))
    if st == kernels.STATUS_OUTSIDE:
        raise OutsidePolytope("query is outside the polytope")
    if st != kernels.STATUS_OK or len(ids) == 0:
        raise EmptyPatchList("no patch contains the query point")
    out = [s.patch(int(i)) for i in ids]
    return (out, np.asarray(f)) if with_f else out
