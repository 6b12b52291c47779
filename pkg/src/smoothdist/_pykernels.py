"""Pure-Python/numpy reference implementations of the hot kernels.

The compiled module ``_ckernels`` exposes the same functions with the same
signatures; ``kernels`` picks one at import time.
"""

from __future__ import annotations

import math

import numpy as np

STATUS_OK = 0
STATUS_OUTSIDE = 1
STATUS_UNCOVERED = 2

BACKEND = "python"


def inscribed_shape(G, tol, max_iter):
    """Max-volume centered ellipsoid inside {y : |g_j.y| <= 1}.

    Solved as the polar problem (min-volume ellipsoid around +-g_j) on the
    design weights u by pairwise Frank-Wolfe: each step moves weight from
    the lowest-leverage support point to the highest-leverage point with the
    exact line search. Returns ``(M, kappa_max, iterations)`` with the
    ellipsoid {y : y^T M y <= 1}; M is scaled by the final max leverage so
    every slab holds exactly.
    """
    G = np.ascontiguousarray(G, dtype=float)
    n, D = G.shape
    u = np.full(n, 1.0 / n)
    Qinv = np.linalg.inv((G.T * u) @ G)
    kappa = np.einsum("ij,jk,ik->i", G, Qinv, G)
    it = 0
    for it in range(1, max_iter + 1):
        if it % 64 == 0:
            Qinv = np.linalg.inv((G.T * u) @ G)
            kappa = np.einsum("ij,jk,ik->i", G, Qinv, G)
        i = int(np.argmax(kappa))
        if kappa[i] / D - 1.0 <= tol:
            break
        supp = np.flatnonzero(u > 0.0)
        j = int(supp[np.argmin(kappa[supp])])
        wi = Qinv @ G[i]
        kij = G[j] @ wi
        # det ratio after moving t from j to i is 1 + a t - b t^2
        a = kappa[i] - kappa[j]
        b = kappa[i] * kappa[j] - kij * kij
        t = u[j] if b <= 0.0 else min(u[j], a / (2.0 * b))
        den = 1.0 + t * kappa[i]
        Qinv = Qinv - (t / den) * np.outer(wi, wi)
        gw = G @ wi
        kappa = kappa - (t / den) * gw * gw
        wj = Qinv @ G[j]
        den = 1.0 - t * kappa[j]
        Qinv = Qinv + (t / den) * np.outer(wj, wj)
        gw = G @ wj
        kappa = kappa + (t / den) * gw * gw
        u[i] += t
        u[j] -= t
        if u[j] <= 1e-15:
            u[j] = 0.0
    Q = (G.T * u) @ G
    kappa = np.einsum("ij,jk,ik->i", G, np.linalg.inv(Q), G)
    kmax = float(kappa.max())
    return kmax * Q, kmax, it


# ---------------------------------------------------------------------------
# query kernels

def _line_hi(c, S, q, d):
    """Upper intersection height of the vertical line over q, or nan."""
    u = q - c[..., :d]
    Sxx = S[..., :d, :d]
    Sxz = S[..., :d, d]
    Szz = S[..., d, d]
    bq = np.einsum("...i,...i->...", Sxz, u)
    cq = np.einsum("...i,...ij,...j->...", u, Sxx, u) - 1.0
    disc = bq * bq - Szz * cq
    with np.errstate(invalid="ignore"):
        hi = c[..., d] + (-bq + np.sqrt(disc)) / Szz
    return np.where(disc >= 0.0, hi, np.nan)


def locate(tab, q):
    """Descend the DAG for the vertical line over q.

    Returns ``(status, leaf_node, leaf_patch, path_len, beam_max,
    patch_ids, f_values)`` where the patch arrays hold every patch whose
    shadow contains q (f < 1). Outside-ness is decided by the facet slacks;
    if the beam loses the line inside the polytope (a sliver missed by the
    sampled cover) the containing patches are found by a full scan instead.
    """
    (node_c, node_S, child_ptr, child_idx, level_width, node_patch, node_level,
     root, patch_c, patch_M, patch_a, patch_b, adj_ptr, adj_idx, cutoff, poly_A, poly_b) = tab
    q = np.asarray(q, dtype=float)
    d = q.shape[0]
    empty = np.zeros(0, dtype=np.int64), np.zeros(0)
    if np.min(poly_b - poly_A @ q) < -1e-12:
        return (STATUS_OUTSIDE, -1, -1, 0, 0) + empty
    frontier = np.array([root], dtype=np.int64)
    hi = _line_hi(node_c[frontier], node_S[frontier], q, d)
    level = int(node_level[root])
    path_len = 1
    beam_max = 1
    lost = bool(np.isnan(hi[0]))
    while level > 0 and not lost:
        parts = [child_idx[child_ptr[i]:child_ptr[i + 1]] for i in frontier]
        cand = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        level -= 1
        path_len += 1
        h = _line_hi(node_c[cand], node_S[cand], q, d)
        ok = ~np.isnan(h)
        if not ok.any():
            lost = True
            break
        cand, h = cand[ok], h[ok]
        Z = h.max()
        keep = h >= Z - level_width[level]
        frontier, hi = cand[keep], h[keep]
        beam_max = max(beam_max, frontier.size)
    leaf = -1
    if not lost and hi.max() >= -1e-12:
        for k in np.argsort(-hi, kind="stable"):
            if node_patch[frontier[k]] >= 0:
                leaf = int(frontier[k])
                break
    if leaf < 0:
        diff = q - patch_c
        f = np.einsum("ki,kij,kj->k", diff, patch_M, diff)
        inside = np.flatnonzero(f < 1.0)
        if inside.size == 0:
            return (STATUS_UNCOVERED, -1, -1, path_len, beam_max) + empty
        p0 = int(inside[np.argmin(f[inside])])
        return (STATUS_OK, -1, p0, path_len, beam_max, inside.astype(np.int64), f[inside])
    p0 = int(node_patch[leaf])
    ids = np.concatenate([[p0], adj_idx[adj_ptr[p0]:adj_ptr[p0 + 1]]]).astype(np.int64)
    diff = q - patch_c[ids]
    f = np.einsum("ki,kij,kj->k", diff, patch_M[ids], diff)
    inside = f < 1.0
    return (STATUS_OK, leaf, p0, path_len, beam_max, ids[inside], f[inside])


def blend(tab, q, ids, f):
    """Value, gradient and total weight for the given containing patches."""
    patch_c, patch_M, patch_a, patch_b, cutoff = tab[8], tab[9], tab[10], tab[11], tab[14]
    q = np.asarray(q, dtype=float)
    psi = np.zeros(f.shape)
    live = f < 1.0 - cutoff
    fl = f[live]
    psi[live] = np.exp(-1.0 / (1.0 - fl * fl))
    Psi = psi.sum()
    if Psi <= 0.0:
        return math.nan, np.full(q.shape, math.nan), 0.0
    phi = psi / Psi
    v = patch_b[ids] - patch_a[ids] @ q
    value = float(phi @ v)
    kap = np.zeros(f.shape)
    kap[live] = psi[live] * fl / (fl * fl - 1.0) ** 2
    Mx = np.einsum("kij,kj->ki", patch_M[ids], q - patch_c[ids])
    grad = -(phi @ patch_a[ids]) - (4.0 / Psi) * ((v - value) * kap) @ Mx
    return value, grad, float(Psi)


def evaluate_batch(tab, Q):
    """Vectorized driver over query rows.

    Returns arrays ``(value, grad, Psi, npatch, leaf_patch, witness, status,
    path_len)``.
    """
    Q = np.ascontiguousarray(Q, dtype=float)
    K, d = Q.shape
    patch_a, patch_b = tab[10], tab[11]
    value = np.full(K, np.nan)
    grad = np.full((K, d), np.nan)
    Psi = np.zeros(K)
    npatch = np.zeros(K, dtype=np.int64)
    leaf_patch = np.full(K, -1, dtype=np.int64)
    witness = np.full(K, np.nan)
    status = np.zeros(K, dtype=np.int64)
    path_len = np.zeros(K, dtype=np.int64)
    for k in range(K):
        st, leaf, p0, pl, _, ids, f = locate(tab, Q[k])
        status[k] = st
        path_len[k] = pl
        if st != STATUS_OK:
            continue
        leaf_patch[k] = p0
        npatch[k] = ids.size
        witness[k] = patch_b[p0] - patch_a[p0] @ Q[k]
        val, g, P = blend(tab, Q[k], ids, f)
        value[k] = val
        grad[k] = g
        Psi[k] = P
        if P <= 0.0:
            status[k] = STATUS_UNCOVERED
    return value, grad, Psi, npatch, leaf_patch, witness, status, path_len


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def intersection_t2(c1, M1, c2, M2, bound=np.inf):
    """max over s of the separating functional for pairs of ellipsoids (N, D) / (N, D, D).

    Values above ``bound`` may stop early (any s with g(s) > bound already
    proves disjointness), so only the comparison with ``bound`` is exact then.

    Works in the frame where the first ellipsoid is the unit ball, so the
    function of s has the closed form sum w_i^2 mu_i s (1-s) / (mu_i s + 1 - s),
    which is concave; golden-section search finds its maximum.
    """
    R = np.linalg.cholesky(M1)
    v = np.einsum("kji,kj->ki", R, c2 - c1)
    Rinv = np.linalg.inv(R)
    B = Rinv @ M2 @ np.swapaxes(Rinv, -1, -2)
    mu, U = np.linalg.eigh(0.5 * (B + np.swapaxes(B, -1, -2)))
    w2 = np.einsum("kji,kj->ki", U, v) ** 2

    def g(s):
        s = s[:, None]
        return np.sum(w2 * mu * s * (1.0 - s) / (mu * s + 1.0 - s), axis=-1)

    lo = np.zeros(len(v))
    hi = np.ones(len(v))
    a = hi - _GOLDEN * (hi - lo)
    b = lo + _GOLDEN * (hi - lo)
    ga, gb = g(a), g(b)
    for _ in range(48):
        if np.all((ga > bound) | (gb > bound)):
            break
        left = ga > gb
        hi = np.where(left, b, hi)
        lo = np.where(left, lo, a)
        a = hi - _GOLDEN * (hi - lo)
        b = lo + _GOLDEN * (hi - lo)
        ga, gb = g(a), g(b)
    return np.maximum(ga, gb)


def quad_any(P, C, S, ptr, idx, bound):
    """out[p] = any over k in idx[ptr[p]:ptr[p+1]] of (P_p - C_k)^T S_k (P_p - C_k) <= bound."""
    owner = np.repeat(np.arange(len(P)), np.diff(ptr))
    out = np.zeros(len(P), dtype=bool)
    for s in range(0, len(idx), 65536):
        o, k = owner[s : s + 65536], idx[s : s + 65536]
        U = P[o] - C[k]
        hit = np.einsum("ki,kij,kj->k", U, S[k], U) <= bound
        out[o[hit]] = True
    return out
