"""Invariant checks over a built structure, plus randomized geometric lemma suites.

Every check returns a ``CheckResult`` carrying a dotted name, a pass flag and
the measured quantity it was judged on. ``verify_structure`` runs them all and
returns a ``VerifyReport``; the CLI prints its table and exits on ``passed``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .blend import evaluate, evaluate_many
from .config import covering_lambda, expansion_beta
from .dag import DagStructure, validate_representatives
from .errors import SmoothDistError
from .macbeath import (ellipsoid_in_ellipsoid, ellipsoids_intersect, inscribed_ellipsoid,
                       macbeath_region, projected_shape, scale_ellipsoid)
from .polytope import LiftedBody, expand, lift, random_polytope, ray_up_distance, sample_interior

# budgets for quantities the theory only bounds up to constants
GRADIENT_BUDGET = 16.0     # max |grad|
HESSIAN_BUDGET = 2.0e3     # max |H| * eps
FD_STEP = 1e-6
FD_TOL = 1e-4
SANDWICH_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float = float("nan")
    detail: str = ""

    def row(self) -> str:
        m = "" if self.measured is None or math.isnan(self.measured) else f"{self.measured:.6g}"
        return f"{'PASS' if self.passed else 'FAIL':4}  {self.name:32} {m:>14}  {self.detail}"


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def table(self) -> str:
        lines = [f"{'':4}  {'invariant':32} {'measured':>14}  detail"]
        lines += [c.row() for c in self.checks]
        lines.append("")
        lines += [f"{k:>24} = {v:.6g}" if isinstance(v, float) else f"{k:>24} = {v}"
                  for k, v in self.constants.items()]
        verdict = "all invariants hold" if self.passed else "FAILED: " + ", ".join(self.failed)
        lines.append(f"{len(self.checks)} checks in {self.seconds:.1f}s; {verdict}")
        return "\n".join(lines)


def _guard(name, fn, *args, **kw) -> CheckResult:
    """Run a check; any exception becomes a failure under the check's own name."""
    try:
        return fn(*args, **kw)
    except (SmoothDistError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return CheckResult(name, False, detail=f"{type(exc).__name__}: {exc}")


def _min_eig(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return math.inf
    if not np.all(np.isfinite(M)):
        return -math.inf
    return float(np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2))).min())


# ---------------------------------------------------------------------------
# structural checks

def check_root(s: DagStructure) -> CheckResult:
    n = s.level_sizes[-1]
    return CheckResult("dag.root_single", n == 1, n, f"levels {s.level_sizes}")


def check_children(s: DagStructure) -> CheckResult:
    empty, orphans, bad = 0, 0, 0
    for l in range(1, len(s.centers)):
        below = len(s.centers[l - 1])
        seen = np.zeros(below, dtype=bool)
        for ch in s.children[l]:
            ch = np.asarray(ch, dtype=np.int64)
            if ch.size == 0:
                empty += 1
                continue
            if ch.min() < 0 or ch.max() >= below:
                bad += 1
                continue
            seen[ch] = True
        orphans += int((~seen).sum())
    ok = empty == 0 and orphans == 0 and bad == 0
    return CheckResult("dag.children_linked", ok, empty + orphans + bad,
                       f"{empty} childless, {orphans} unparented, {bad} out of range")


def check_positive_definite(s: DagStructure) -> CheckResult:
    worst, where = math.inf, ""
    for l, S in enumerate(s.shapes):
        e = _min_eig(S)
        if e < worst:
            worst, where = e, f"node level {l}"
    e = _min_eig(s.patch_shape)
    if e < worst:
        worst, where = e, "patch shapes"
    if s.num_patches:
        bad = [int(i) for i in range(s.num_patches) if _min_eig(s.patch_shape[i]) <= 0]
        if bad:
            where = f"patch {bad[0]}" + (f" (+{len(bad) - 1} more)" if len(bad) > 1 else "")
    return CheckResult("ellipsoid.positive_definite", worst > 0, worst, f"smallest eigenvalue at {where}")


def check_projection(s: DagStructure) -> CheckResult:
    """Patches are exactly the shadows of their top nodes."""
    if s.num_patches == 0:
        return CheckResult("patch.projection", False, detail="no patches")
    S0 = s.shapes[0][s.patch_node]
    dS = np.abs(projected_shape(S0) - s.patch_shape).max(axis=(1, 2)) / np.abs(s.patch_shape).max(axis=(1, 2))
    dc = np.abs(s.centers[0][s.patch_node, :-1] - s.patch_center).max()
    err = float(max(dS.max(), dc))
    return CheckResult("patch.projection", err <= 1e-9, err, f"worst patch {int(np.argmax(dS))}")


def check_adjacency(s: DagStructure) -> CheckResult:
    pairs = {(i, int(j)) for i, adj in enumerate(s.adjacency) for j in adj}
    asym = sum(1 for i, j in pairs if (j, i) not in pairs)
    selfs = sum(1 for i, j in pairs if i == j)
    return CheckResult("patch.adjacency_symmetric", asym == 0 and selfs == 0, asym + selfs,
                       f"{len(pairs)} directed pairs")


def check_within_expanded(s: DagStructure) -> CheckResult:
    """Each covering ellipsoid lies in its level's expanded body (support test)."""
    body = lift(s.polytope)
    worst = -math.inf
    for l, (C, S) in enumerate(zip(s.centers, s.shapes)):
        ex = expand(body, s.delta(l))
        Sinv = np.linalg.inv(S)
        reach = np.sqrt(np.einsum("ji,kil,jl->kj", ex.A, Sinv, ex.A))
        over = (C @ ex.A.T + reach - ex.b).max()
        worst = max(worst, float(over))
    return CheckResult("cover.within_expanded", worst <= 1e-9, worst, "max support excess")


def check_ground(s: DagStructure) -> CheckResult:
    """Centers lie in the lifted body itself."""
    body = lift(s.polytope)
    worst = min(float(body.slacks(C).min()) for C in s.centers)
    return CheckResult("cover.centers_in_body", worst >= -1e-12, worst, "min slack of centers")


def check_coverage_stats(s: DagStructure) -> CheckResult:
    lv = s.stats.get("levels", [])
    res = [int(st.get("residual", 0)) for st in lv]
    cnt = [int(st.get("samples", 1)) for st in lv]
    frac = max((r / c for r, c in zip(res, cnt)), default=0.0)
    limit = s.config.samples.residual
    return CheckResult("cover.verified", frac <= limit, frac, f"uncovered fraction per level (limit {limit:g})")


def check_ball(s: DagStructure) -> CheckResult:
    """Smallest covering semi-axis over delta_l, against lambda_c / (d+1)."""
    D = s.dim + 1
    ratio = min(float((1.0 / np.sqrt(np.linalg.eigvalsh(S)[:, -1])).min()) / s.delta(l)
                for l, S in enumerate(s.shapes))
    c = s.lambda_c / D
    return CheckResult("cover.ball_containment", ratio >= c * (1 - 1e-3), ratio, f"bound {c:.4g}")


def check_representatives(s: DagStructure) -> CheckResult:
    ex = validate_representatives(s)
    return CheckResult("patch.representative", ex <= s.epsilon + 1e-12, ex, f"v_rep - d over patches, eps {s.epsilon:g}")


def check_john(s: DagStructure, count: int = 24, seed: int = 0) -> CheckResult:
    """Stored covering ellipsoids against their recomputed Macbeath regions."""
    rng = np.random.default_rng([seed, 31])
    body = lift(s.polytope)
    D = s.dim + 1
    inner, outer = 0.0, 0.0
    for l in range(len(s.centers)):
        ex = expand(body, s.delta(l))
        pick = rng.choice(len(s.centers[l]), size=min(count, len(s.centers[l])), replace=False)
        for i in pick:
            reg = macbeath_region(ex, s.centers[l][i], s.lambda_c)
            r = _john_ratios(reg, s.shapes[l][i])
            inner, outer = max(inner, r[0]), max(outer, r[1])
    ok = inner <= 1 + 1e-8 and outer <= D * (1 + 1e-3) ** 2
    return CheckResult("macbeath.john_sandwich", ok, max(inner, outer / D),
                       f"slab fill {inner:.6g}, vertex f/D {outer / D:.6g}")


# ---------------------------------------------------------------------------
# field checks

def _queries(s: DagStructure, count: int, seed: int) -> np.ndarray:
    return sample_interior(s.polytope, count, 7919 * seed + 77, margin=1e-9)


def field_checks(s: DagStructure, Q: np.ndarray, fd_points: int = 200) -> tuple[list, dict]:
    p, eps = s.polytope, s.epsilon
    val, G, Psi, npatch, _, wit, st, path = evaluate_many(s, Q)
    d = (p.b - Q @ p.A.T).min(axis=1)
    ok = st == kernels.STATUS_OK
    out = [CheckResult("query.status", bool(ok.all()), int((~ok).sum()), "interior queries not answered")]
    v, G, Psi, d, wit = val[ok], G[ok], Psi[ok], d[ok], wit[ok]
    if not ok.any():
        return out, {}
    err = v - d
    out.append(CheckResult("blend.sandwich", bool(np.all(err >= -SANDWICH_TOL) and np.all(err <= eps + SANDWICH_TOL)),
                           float(err.max()), f"d~ - d in [{err.min():.3g}, {err.max():.3g}], eps {eps:g}"))
    werr = wit - d
    out.append(CheckResult("witness.sandwich", bool(np.all(werr >= -SANDWICH_TOL) and np.all(werr <= eps + SANDWICH_TOL)),
                           float(werr.max()), f"v_rep - d in [{werr.min():.3g}, {werr.max():.3g}]"))
    out.append(CheckResult("blend.psi_lower_bound", bool(np.all(Psi > 0.25)), float(Psi.min()), "min Psi > 1/4"))
    gn = np.linalg.norm(G, axis=1)
    out.append(CheckResult("blend.gradient_bound", bool(gn.max() <= GRADIENT_BUDGET), float(gn.max()),
                           f"budget {GRADIENT_BUDGET:g}"))
    pl = path[ok]
    out.append(CheckResult("dag.path_length", bool(np.all(pl <= s.m + 1)), int(pl.max()), f"m + 1 = {s.m + 1}"))

    # sum of weights and finite differences on a subsample
    sub = Q[ok][np.linspace(0, ok.sum() - 1, min(fd_points, int(ok.sum()))).astype(int)]
    pu, fd, hess = 0.0, 0.0, 0.0
    from .blend import eval_hessian_fd
    for q in sub:
        r = evaluate(s, q)
        pu = max(pu, abs(sum(c.phi for c in r.contributions) - 1.0))
        P = np.vstack([q + FD_STEP * e for e in np.eye(s.dim)] + [q - FD_STEP * e for e in np.eye(s.dim)])
        pv, *_, pst, _ = evaluate_many(s, P)
        if np.all(pst == kernels.STATUS_OK):
            g = (pv[: s.dim] - pv[s.dim:]) / (2.0 * FD_STEP)
            fd = max(fd, float(np.abs(g - r.gradient).max()))
            try:
                hess = max(hess, float(np.linalg.norm(eval_hessian_fd(s, q), 2)))
            except SmoothDistError:
                pass
    out.append(CheckResult("blend.partition_of_unity", pu <= 1e-12, pu, "max |sum phi - 1|"))
    out.append(CheckResult("blend.gradient_fd", fd <= FD_TOL, fd, f"central differences, h {FD_STEP:g}"))
    out.append(CheckResult("blend.hessian_scale", hess * eps <= HESSIAN_BUDGET, hess * eps,
                           f"max |H| * eps, budget {HESSIAN_BUDGET:g}"))
    consts = {"depth": int(npatch[ok].max()), "min_Psi": float(Psi.min()), "max_grad": float(gn.max()),
              "max_hessian": hess, "max_error": float(err.max())}
    return out, consts


# ---------------------------------------------------------------------------
# randomized lemma suites (independent of any built structure)

def _john_ratios(region, M) -> tuple[float, float]:
    """(max slab fill of E, max f_E over region vertices) for E = (center, M)."""
    Minv = np.linalg.inv(M)
    fill = np.sqrt(np.einsum("ji,il,jl->j", region.A, Minv, region.A)) / region.widths
    V = region.vertices() - region.center
    fv = np.einsum("ki,ij,kj->k", V, M, V)
    return float(fill.max()), float(fv.max())


POOL_SIZE = 32


class _Pool:
    """Fixed set of random polytopes (d = 2, 3) reused across instances.

    Building a polytope runs several LPs; randomizing the center, scale and
    expansion per instance is what the lemma suites actually need.
    """

    def __init__(self, seed: int, size: int = POOL_SIZE, dims=(2, 3)):
        self.rng = np.random.default_rng([seed, 101])
        self.items = []
        for k in range(size):
            p = random_polytope(dims[k % len(dims)], int(self.rng.integers(5, 17)),
                                int(self.rng.integers(1 << 30)))
            self.items.append((p, *p.bounding_box()))

    def polytope(self):
        return self.items[int(self.rng.integers(len(self.items)))]

    def body(self, lifted: bool | None = None):
        """(body, base polytope entry); lifted bodies get a random expansion."""
        item = self.polytope()
        if lifted is None:
            lifted = bool(self.rng.integers(2))
        if lifted:
            return expand(lift(item[0]), float(self.rng.uniform(0.02, 0.3))), item
        return item[0], item

    def point(self, item, margin: float = 1e-6) -> np.ndarray:
        p, lo, hi = item
        while True:
            x = lo + self.rng.random(p.dim) * (hi - lo)
            if float((p.b - p.A @ x).min()) > margin:
                return x

    def point_in(self, body, item) -> np.ndarray:
        """Random strictly interior point of a Polytope or a lifted body."""
        x = self.point(item)
        if isinstance(body, LiftedBody):
            top = float((body.base.b + body.delta - body.base.A @ x).min())
            return np.append(x, self.rng.uniform(0.02, 0.98) * top)
        return x


def _in_region(region, rng) -> np.ndarray:
    """Point of the region along a random direction (covers the region, not uniform)."""
    u = rng.standard_normal(region.dim)
    u /= np.linalg.norm(u)
    proj = np.abs(region.A @ u)
    t = float(np.min(region.widths[proj > 0] / proj[proj > 0]))
    return region.center + rng.random() * t * u


def john_suite(instances: int = 1000, seed: int = 0) -> CheckResult:
    """E^lam is inside M^lam (slab test) and M^lam inside sqrt(D) E^lam (vertex test)."""
    pool = _Pool(seed)
    inner, outer = 0.0, 0.0
    for _ in range(instances):
        body, item = pool.body()
        lam = float(pool.rng.uniform(0.05, 0.9))
        reg = macbeath_region(body, pool.point_in(body, item), lam)
        e = inscribed_ellipsoid(reg)
        fill, fv = _john_ratios(reg, e.M)
        inner, outer = max(inner, fill), max(outer, fv / reg.dim)
    ok = inner <= 1 + 1e-8 and outer <= (1 + 1e-3) ** 2
    return CheckResult("lemma.john_containment", ok, outer,
                       f"{instances} regions; slab fill {inner:.10g}, vertex f/D {outer:.6g}")


def _regions_meet(rx, ry) -> bool:
    """LP feasibility of the intersection of two slab regions."""
    A = np.vstack([rx.A, -rx.A, ry.A, -ry.A])
    b = np.concatenate([rx.A @ rx.center + rx.widths, rx.widths - rx.A @ rx.center,
                        ry.A @ ry.center + ry.widths, ry.widths - ry.A @ ry.center])
    res = linprog(np.zeros(rx.dim), A_ub=A, b_ub=b, bounds=[(None, None)] * rx.dim, method="highs")
    return res.status == 0


def expansion_suite(instances: int = 1000, seed: int = 0, lam: float = 0.2) -> CheckResult:
    """Overlapping M^lam(x), M^lam(y) imply M^lam(y) in M^(beta lam)(x); likewise for
    the ellipsoids with factor beta lam sqrt(D)."""
    beta = expansion_beta(lam)
    pool = _Pool(seed + 1)
    tested, e_tested, worst, e_fail = 0, 0, 0.0, 0
    for _ in range(instances):
        body, item = pool.body()
        x = pool.point_in(body, item)
        # y drawn from M^(3 lam)(x) so that a good share of pairs overlap
        y = _in_region(macbeath_region(body, x, min(3 * lam, 0.95)), pool.rng)
        rx, ry = macbeath_region(body, x, lam), macbeath_region(body, y, lam)
        if _regions_meet(rx, ry):
            tested += 1
            big = rx.scaled(beta * lam)
            V = ry.vertices() - big.center
            worst = max(worst, float((np.abs(V @ big.A.T) / big.widths).max()))
        ex, ey = inscribed_ellipsoid(rx), inscribed_ellipsoid(ry)
        if ellipsoids_intersect(ex, ey):
            e_tested += 1
            if not ellipsoid_in_ellipsoid(ey, scale_ellipsoid(ex, beta * math.sqrt(rx.dim))):
                e_fail += 1
    ok = worst <= 1 + 1e-9 and e_fail == 0 and tested > 0
    return CheckResult("lemma.expansion_containment", ok, worst,
                       f"{tested} overlapping region pairs, {e_tested} ellipsoid pairs "
                       f"({e_fail} failing) of {instances}")


def ray_suite(instances: int = 1000, seed: int = 0) -> CheckResult:
    """(1 - lam) ray(x) <= ray(y) <= (1 + lam) ray(x) for y in M^lam(x) of a hypograph."""
    pool = _Pool(seed + 2)
    worst = -math.inf
    for _ in range(instances):
        body, item = pool.body(lifted=True)
        lam = float(pool.rng.uniform(0.05, 0.9))
        x = pool.point_in(body, item)
        y = _in_region(macbeath_region(body, x, lam), pool.rng)
        rx, ry = float(ray_up_distance(body, x)), float(ray_up_distance(body, y))
        worst = max(worst, (1 - lam) * rx - ry, ry - (1 + lam) * rx)
    return CheckResult("lemma.ray_sandwich", worst <= 1e-9, worst, f"{instances} pairs; max violation")


def ball_suite(instances: int = 1000, seed: int = 0) -> CheckResult:
    """Covering ellipsoids E^(lam_c)(y), y in the lifted body, Macbeath w.r.t. the
    delta-expanded body, hold a ball of radius lam_c delta / (d+1)."""
    pool = _Pool(seed + 3)
    worst = math.inf
    for _ in range(instances):
        p, lo, hi = item = pool.polytope()
        body = lift(p)
        delta = float(pool.rng.uniform(0.01, 0.4))
        x = pool.point_in(body, item)
        lc = covering_lambda(p.dim)
        e = inscribed_ellipsoid(macbeath_region(expand(body, delta), x, lc))
        worst = min(worst, float(e.radii()[0]) / (lc * delta / (p.dim + 1)))
    return CheckResult("lemma.ball_containment", worst >= 1 - 1e-3, worst, f"{instances} ellipsoids; min r / bound")


def lemma_suites(instances: int = 1000, seed: int = 0) -> list[CheckResult]:
    return [_guard(n, f, instances, seed) for n, f in (
        ("lemma.john_containment", john_suite), ("lemma.expansion_containment", expansion_suite),
        ("lemma.ray_sandwich", ray_suite), ("lemma.ball_containment", ball_suite))]


# ---------------------------------------------------------------------------

def verify_structure(s: DagStructure, samples: int = 2000, *, seed: int = 0,
                     lemma_instances: int = 200) -> VerifyReport:
    """Run every invariant on ``s``; ``samples`` interior queries drive the field checks."""
    t0 = time.perf_counter()
    rep = VerifyReport()
    for name, fn in (
        ("dag.root_single", check_root), ("dag.children_linked", check_children),
        ("ellipsoid.positive_definite", check_positive_definite), ("patch.projection", check_projection),
        ("patch.adjacency_symmetric", check_adjacency), ("cover.centers_in_body", check_ground),
        ("cover.within_expanded", check_within_expanded), ("cover.verified", check_coverage_stats),
        ("cover.ball_containment", check_ball), ("patch.representative", check_representatives),
        ("macbeath.john_sandwich", check_john),
    ):
        rep.checks.append(_guard(name, fn, s))
    try:
        Q = _queries(s, samples, seed)
        checks, consts = field_checks(s, Q, fd_points=min(200, samples))
    except (SmoothDistError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        checks, consts = [CheckResult("query.status", False, detail=f"{type(exc).__name__}: {exc}")], {}
    rep.checks.extend(checks)
    if lemma_instances > 0:
        rep.checks.extend(lemma_suites(lemma_instances, seed))
    rep.constants.update(consts)
    ball = next((c for c in rep.checks if c.name == "cover.ball_containment"), None)
    if ball is not None and not math.isnan(ball.measured):
        rep.constants["min_radius_over_eps"] = ball.measured
    rep.constants["levels"] = s.m + 1
    rep.constants["patches"] = s.num_patches
    rep.seconds = time.perf_counter() - t0
    return rep


__all__ = [
    "CheckResult", "VerifyReport", "ball_suite", "expansion_suite", "field_checks", "john_suite",
    "lemma_suites", "ray_suite", "verify_structure",
]
