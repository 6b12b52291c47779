# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, fabs, isnan, NAN

cnp.import_array()

BACKEND = "cython"

DEF STATUS_OK = 0
DEF STATUS_OUTSIDE = 1
DEF STATUS_UNCOVERED = 2


cdef void _gram_inverse(double[:, ::1] G, double[::1] u, double[:, ::1] Qinv,
                        double[:, ::1] work):
    # Qinv <- (sum_j u_j g_j g_j^T)^-1 via Gauss-Jordan on a D x 2D block
    cdef Py_ssize_t n = G.shape[0], D = G.shape[1]
    cdef Py_ssize_t i, j, k, piv
    cdef double s, t, best
    for i in range(D):
        for j in range(D):
            s = 0.0
            for k in range(n):
                s += u[k] * G[k, i] * G[k, j]
            work[i, j] = s
            work[i, D + j] = 1.0 if i == j else 0.0
    for i in range(D):
        piv = i
        best = abs(work[i, i])
        for k in range(i + 1, D):
            if abs(work[k, i]) > best:
                best = abs(work[k, i])
                piv = k
        if piv != i:
            for j in range(2 * D):
                t = work[i, j]
                work[i, j] = work[piv, j]
                work[piv, j] = t
        t = work[i, i]
        for j in range(2 * D):
            work[i, j] /= t
        for k in range(D):
            if k != i:
                t = work[k, i]
                if t != 0.0:
                    for j in range(2 * D):
                        work[k, j] -= t * work[i, j]
    for i in range(D):
        for j in range(D):
            Qinv[i, j] = work[i, D + j]


cdef void _leverages(double[:, ::1] G, double[:, ::1] Qinv, double[::1] kappa):
    cdef Py_ssize_t n = G.shape[0], D = G.shape[1]
    cdef Py_ssize_t k, i, j
    cdef double s, r
    for k in range(n):
        s = 0.0
        for i in range(D):
            r = 0.0
            for j in range(D):
                r += Qinv[i, j] * G[k, j]
            s += G[k, i] * r
        kappa[k] = s


cdef void _rank_one(double[:, ::1] G, double[:, ::1] Qinv, double[::1] kappa, double[::1] w,
                    Py_ssize_t j, double t):
    # Q <- Q + t g_j g_j^T, updating Qinv and all leverages
    cdef Py_ssize_t n = G.shape[0], D = G.shape[1], a, b, k
    cdef double s, den, gw
    for a in range(D):
        s = 0.0
        for b in range(D):
            s += Qinv[a, b] * G[j, b]
        w[a] = s
    den = 1.0 + t * kappa[j]
    for a in range(D):
        for b in range(D):
            Qinv[a, b] -= (t / den) * w[a] * w[b]
    for k in range(n):
        gw = 0.0
        for a in range(D):
            gw += G[k, a] * w[a]
        kappa[k] -= (t / den) * gw * gw


def inscribed_shape(G_in, double tol, int max_iter):
    cdef double[:, ::1] G = np.ascontiguousarray(G_in, dtype=np.float64)
    cdef Py_ssize_t n = G.shape[0], D = G.shape[1]
    cdef double[::1] u = np.full(n, 1.0 / n)
    cdef double[:, ::1] Qinv = np.empty((D, D))
    cdef double[:, ::1] work = np.empty((D, 2 * D))
    cdef double[::1] kappa = np.empty(n)
    cdef double[::1] w = np.empty(D)
    cdef Py_ssize_t a, b, k, i, j
    cdef int it = 0
    cdef double kij, ca, cb, t, s, kp
    _gram_inverse(G, u, Qinv, work)
    _leverages(G, Qinv, kappa)
    for it in range(1, max_iter + 1):
        if it % 64 == 0:
            _gram_inverse(G, u, Qinv, work)
            _leverages(G, Qinv, kappa)
        i = 0
        for k in range(1, n):
            if kappa[k] > kappa[i]:
                i = k
        if kappa[i] / D - 1.0 <= tol:
            break
        j = -1
        for k in range(n):
            if u[k] > 0.0 and (j < 0 or kappa[k] < kappa[j]):
                j = k
        kij = 0.0
        for a in range(D):
            s = 0.0
            for b in range(D):
                s += Qinv[a, b] * G[i, b]
            kij += G[j, a] * s
        ca = kappa[i] - kappa[j]
        cb = kappa[i] * kappa[j] - kij * kij
        if cb <= 0.0:
            t = u[j]
        else:
            t = ca / (2.0 * cb)
            if t > u[j]:
                t = u[j]
        _rank_one(G, Qinv, kappa, w, i, t)
        _rank_one(G, Qinv, kappa, w, j, -t)
        u[i] += t
        u[j] -= t
        if u[j] <= 1e-15:
            u[j] = 0.0
    # exact refresh, then scale so every slab holds
    _gram_inverse(G, u, Qinv, work)
    _leverages(G, Qinv, kappa)
    kp = kappa[0]
    for k in range(1, n):
        if kappa[k] > kp:
            kp = kappa[k]
    M = np.empty((D, D))
    cdef double[:, ::1] Mv = M
    for a in range(D):
        for b in range(D):
            s = 0.0
            for k in range(n):
                s += u[k] * G[k, a] * G[k, b]
            Mv[a, b] = kp * s
    return M, kp, it


# ---------------------------------------------------------------------------
# query kernels

cdef double _line_hi(const double[:, ::1] c, const double[:, :, ::1] S, Py_ssize_t node,
                     const double[::1] q, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double bq = 0.0, cq = 0.0, r, disc, szz
    for i in range(d):
        r = 0.0
        for j in range(d):
            r += S[node, i, j] * (q[j] - c[node, j])
        cq += (q[i] - c[node, i]) * r
        bq += S[node, i, d] * (q[i] - c[node, i])
    cq -= 1.0
    szz = S[node, d, d]
    disc = bq * bq - szz * cq
    if disc < 0.0:
        return NAN
    return c[node, d] + (-bq + sqrt(disc)) / szz


cdef class _Tables:
    cdef const double[:, ::1] node_c
    cdef const double[:, :, ::1] node_S
    cdef const long long[::1] child_ptr
    cdef const long long[::1] child_idx
    cdef const double[::1] level_width
    cdef const long long[::1] node_patch
    cdef const long long[::1] node_level
    cdef long long root
    cdef const double[:, ::1] patch_c
    cdef const double[:, :, ::1] patch_M
    cdef const double[:, ::1] patch_a
    cdef const double[::1] patch_b
    cdef const long long[::1] adj_ptr
    cdef const long long[::1] adj_idx
    cdef double cutoff
    cdef const double[:, ::1] poly_A
    cdef const double[::1] poly_b
    # scratch
    cdef long long[::1] stamp
    cdef long long[::1] frontier
    cdef long long[::1] cand
    cdef double[::1] fr_hi
    cdef double[::1] cand_hi
    cdef long long[::1] pids
    cdef double[::1] pf
    cdef long long tick

    def __init__(self, tab):
        (node_c, node_S, child_ptr, child_idx, level_width, node_patch, node_level,
         root, patch_c, patch_M, patch_a, patch_b, adj_ptr, adj_idx, cutoff, poly_A, poly_b) = tab
        self.poly_A = np.ascontiguousarray(poly_A, dtype=np.float64)
        self.poly_b = np.ascontiguousarray(poly_b, dtype=np.float64)
        self.node_c = np.ascontiguousarray(node_c, dtype=np.float64)
        self.node_S = np.ascontiguousarray(node_S, dtype=np.float64)
        self.child_ptr = np.ascontiguousarray(child_ptr, dtype=np.int64)
        self.child_idx = np.ascontiguousarray(child_idx, dtype=np.int64)
        self.level_width = np.ascontiguousarray(level_width, dtype=np.float64)
        self.node_patch = np.ascontiguousarray(node_patch, dtype=np.int64)
        self.node_level = np.ascontiguousarray(node_level, dtype=np.int64)
        self.root = root
        self.patch_c = np.ascontiguousarray(patch_c, dtype=np.float64)
        self.patch_M = np.ascontiguousarray(patch_M, dtype=np.float64)
        self.patch_a = np.ascontiguousarray(patch_a, dtype=np.float64)
        self.patch_b = np.ascontiguousarray(patch_b, dtype=np.float64)
        self.adj_ptr = np.ascontiguousarray(adj_ptr, dtype=np.int64)
        self.adj_idx = np.ascontiguousarray(adj_idx, dtype=np.int64)
        self.cutoff = cutoff
        N = self.node_c.shape[0]
        self.stamp = np.zeros(N, dtype=np.int64)
        self.frontier = np.empty(N, dtype=np.int64)
        self.cand = np.empty(N, dtype=np.int64)
        self.fr_hi = np.empty(N)
        self.cand_hi = np.empty(N)
        P = max(self.patch_c.shape[0], 1)
        self.pids = np.empty(P, dtype=np.int64)
        self.pf = np.empty(P)
        self.tick = 0

    cdef double _quad(self, long long pid, const double[::1] q) noexcept:
        cdef Py_ssize_t d = q.shape[0], a, b
        cdef double f = 0.0, r
        for a in range(d):
            r = 0.0
            for b in range(d):
                r += self.patch_M[pid, a, b] * (q[b] - self.patch_c[pid, b])
            f += (q[a] - self.patch_c[pid, a]) * r
        return f

    cdef int _scan(self, const double[::1] q, long long* p0_out, long long* np_out) noexcept:
        """Full scan for the containing patches; used when the beam loses the line."""
        cdef long long pid, np_ = 0, best = -1
        cdef double f, fb = 1.0
        for pid in range(self.patch_c.shape[0]):
            f = self._quad(pid, q)
            if f < 1.0:
                self.pids[np_] = pid
                self.pf[np_] = f
                np_ += 1
                if f < fb:
                    fb = f
                    best = pid
        np_out[0] = np_
        if best < 0:
            return STATUS_UNCOVERED
        p0_out[0] = best
        return STATUS_OK

    cdef int _locate(self, const double[::1] q, long long* leaf_out, long long* p0_out,
                     long long* path_out, long long* beam_out, long long* np_out) noexcept:
        cdef Py_ssize_t d = q.shape[0], a
        cdef long long nf = 1, nc, i, k, e, node, level, leaf = -1, p0, np_, pid
        cdef double h, Z, best, f, s
        path_out[0] = 0
        beam_out[0] = 0
        for i in range(self.poly_A.shape[0]):
            s = self.poly_b[i]
            for a in range(d):
                s -= self.poly_A[i, a] * q[a]
            if s < -1e-12:
                return STATUS_OUTSIDE
        self.frontier[0] = self.root
        h = _line_hi(self.node_c, self.node_S, self.root, q, d)
        path_out[0] = 1
        beam_out[0] = 1
        if isnan(h):
            return self._scan(q, p0_out, np_out)
        self.fr_hi[0] = h
        level = self.node_level[self.root]
        while level > 0:
            self.tick += 1
            nc = 0
            for i in range(nf):
                node = self.frontier[i]
                for e in range(self.child_ptr[node], self.child_ptr[node + 1]):
                    k = self.child_idx[e]
                    if self.stamp[k] != self.tick:
                        self.stamp[k] = self.tick
                        self.cand[nc] = k
                        nc += 1
            level -= 1
            path_out[0] += 1
            Z = NAN
            for i in range(nc):
                h = _line_hi(self.node_c, self.node_S, self.cand[i], q, d)
                self.cand_hi[i] = h
                if not isnan(h) and (isnan(Z) or h > Z):
                    Z = h
            if isnan(Z):
                return self._scan(q, p0_out, np_out)
            nf = 0
            for i in range(nc):
                h = self.cand_hi[i]
                if not isnan(h) and h >= Z - self.level_width[level]:
                    self.frontier[nf] = self.cand[i]
                    self.fr_hi[nf] = h
                    nf += 1
            if nf > beam_out[0]:
                beam_out[0] = nf
        # level 0: highest hit that carries a patch
        best = NAN
        for i in range(nf):
            if isnan(best) or self.fr_hi[i] > best:
                best = self.fr_hi[i]
        if best < -1e-12:
            return self._scan(q, p0_out, np_out)
        best = NAN
        for i in range(nf):
            if self.node_patch[self.frontier[i]] >= 0:
                if isnan(best) or self.fr_hi[i] > best:
                    best = self.fr_hi[i]
                    leaf = self.frontier[i]
        if leaf < 0:
            return self._scan(q, p0_out, np_out)
        leaf_out[0] = leaf
        p0 = self.node_patch[leaf]
        p0_out[0] = p0
        np_ = 0
        for e in range(-1, self.adj_ptr[p0 + 1] - self.adj_ptr[p0]):
            pid = p0 if e < 0 else self.adj_idx[self.adj_ptr[p0] + e]
            f = self._quad(pid, q)
            if f < 1.0:
                self.pids[np_] = pid
                self.pf[np_] = f
                np_ += 1
        np_out[0] = np_
        return STATUS_OK

    cdef double _blend(self, const double[::1] q, long long np_, double[::1] grad,
                       double* Psi_out) noexcept:
        cdef Py_ssize_t d = q.shape[0]
        cdef long long i, pid
        cdef Py_ssize_t a, b
        cdef double f, psi, Psi = 0.0, value = 0.0, v, kap, coef, r
        for i in range(np_):
            f = self.pf[i]
            if f < 1.0 - self.cutoff:
                Psi += exp(-1.0 / (1.0 - f * f))
        Psi_out[0] = Psi
        if Psi <= 0.0:
            for a in range(d):
                grad[a] = NAN
            return NAN
        for i in range(np_):
            pid = self.pids[i]
            f = self.pf[i]
            if f < 1.0 - self.cutoff:
                psi = exp(-1.0 / (1.0 - f * f))
                v = self.patch_b[pid]
                for a in range(d):
                    v -= self.patch_a[pid, a] * q[a]
                value += (psi / Psi) * v
        for a in range(d):
            grad[a] = 0.0
        for i in range(np_):
            pid = self.pids[i]
            f = self.pf[i]
            if f < 1.0 - self.cutoff:
                psi = exp(-1.0 / (1.0 - f * f))
                v = self.patch_b[pid]
                for a in range(d):
                    v -= self.patch_a[pid, a] * q[a]
                kap = psi * f / ((f * f - 1.0) * (f * f - 1.0))
                coef = (4.0 / Psi) * (v - value) * kap
                for a in range(d):
                    r = 0.0
                    for b in range(d):
                        r += self.patch_M[pid, a, b] * (q[b] - self.patch_c[pid, b])
                    grad[a] -= (psi / Psi) * self.patch_a[pid, a] + coef * r
        return value

    def locate(self, q_in):
        cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
        cdef long long leaf = -1, p0 = -1, pl = 0, bm = 0, np_ = 0
        st = self._locate(q, &leaf, &p0, &pl, &bm, &np_)
        if st != STATUS_OK:
            return (st, -1, -1, pl, bm, np.zeros(0, dtype=np.int64), np.zeros(0))
        return (st, leaf, p0, pl, bm, np.array(self.pids[:np_]), np.array(self.pf[:np_]))

    def evaluate_batch(self, Q_in):
        cdef double[:, ::1] Q = np.ascontiguousarray(Q_in, dtype=np.float64)
        cdef Py_ssize_t K = Q.shape[0], d = Q.shape[1], k, a
        value = np.full(K, np.nan)
        grad = np.full((K, d), np.nan)
        Psi = np.zeros(K)
        npatch = np.zeros(K, dtype=np.int64)
        leaf_patch = np.full(K, -1, dtype=np.int64)
        witness = np.full(K, np.nan)
        status = np.zeros(K, dtype=np.int64)
        path_len = np.zeros(K, dtype=np.int64)
        cdef double[::1] vv = value, Pv = Psi, wv = witness
        cdef double[:, ::1] gv = grad
        cdef long long[::1] npv = npatch, lpv = leaf_patch, stv = status, plv = path_len
        cdef long long leaf, p0, pl, bm, np_
        cdef double P, w
        cdef int st
        for k in range(K):
            leaf = -1
            p0 = -1
            pl = 0
            bm = 0
            np_ = 0
            st = self._locate(Q[k], &leaf, &p0, &pl, &bm, &np_)
            stv[k] = st
            plv[k] = pl
            if st != STATUS_OK:
                continue
            lpv[k] = p0
            npv[k] = np_
            w = self.patch_b[p0]
            for a in range(d):
                w -= self.patch_a[p0, a] * Q[k, a]
            wv[k] = w
            vv[k] = self._blend(Q[k], np_, gv[k], &P)
            Pv[k] = P
            if P <= 0.0:
                stv[k] = STATUS_UNCOVERED
        return value, grad, Psi, npatch, leaf_patch, witness, status, path_len


_cache = {}


def _tables(tab):
    key = id(tab)
    hit = _cache.get(key)
    if hit is not None and hit[0] is tab:
        return hit[1]
    t = _Tables(tab)
    if len(_cache) > 32:
        _cache.clear()
    _cache[key] = (tab, t)
    return t


def locate(tab, q):
    return _tables(tab).locate(q)


def evaluate_batch(tab, Q):
    return _tables(tab).evaluate_batch(Q)


cdef double _GOLDEN = 0.6180339887498949


cdef bint _chol(const double[:, ::1] M, double* L, int D) noexcept nogil:
    """Lower Cholesky factor of M into L (row-major D x D)."""
    cdef int i, j, k
    cdef double s
    for i in range(D * D):
        L[i] = 0.0
    for i in range(D):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i * D + k] * L[j * D + k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i * D + i] = sqrt(s)
            else:
                L[i * D + j] = s / L[j * D + j]
    return True


cdef void _jacobi(double* B, double* V, int D) noexcept nogil:
    """Cyclic Jacobi: B becomes diagonal (eigenvalues), V holds eigenvectors as columns."""
    cdef int i, j, k, sweep
    cdef double off, th, t, c, s, bik, bjk, vki, vkj, scale
    for i in range(D):
        for j in range(D):
            V[i * D + j] = 1.0 if i == j else 0.0
    for sweep in range(50):
        off = 0.0
        scale = 0.0
        for i in range(D):
            scale += B[i * D + i] * B[i * D + i]
            for j in range(i + 1, D):
                off += B[i * D + j] * B[i * D + j]
        if off <= 1e-30 * scale:
            return
        for i in range(D):
            for j in range(i + 1, D):
                if B[i * D + j] == 0.0:
                    continue
                th = (B[j * D + j] - B[i * D + i]) / (2.0 * B[i * D + j])
                t = (1.0 if th >= 0.0 else -1.0) / (fabs(th) + sqrt(th * th + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(D):
                    bik = B[i * D + k]
                    bjk = B[j * D + k]
                    B[i * D + k] = c * bik - s * bjk
                    B[j * D + k] = s * bik + c * bjk
                for k in range(D):
                    bik = B[k * D + i]
                    bjk = B[k * D + j]
                    B[k * D + i] = c * bik - s * bjk
                    B[k * D + j] = s * bik + c * bjk
                for k in range(D):
                    vki = V[k * D + i]
                    vkj = V[k * D + j]
                    V[k * D + i] = c * vki - s * vkj
                    V[k * D + j] = s * vki + c * vkj


cdef inline double _sep(const double* w2mu, const double* mu, double s, int D) noexcept nogil:
    cdef double out = 0.0
    cdef int i
    for i in range(D):
        out += w2mu[i] * s * (1.0 - s) / (mu[i] * s + 1.0 - s)
    return out


def intersection_t2(c1_in, M1_in, c2_in, M2_in, double bound=np.inf):
    cdef const double[:, ::1] c1 = np.ascontiguousarray(c1_in, dtype=np.float64)
    cdef const double[:, ::1] c2 = np.ascontiguousarray(c2_in, dtype=np.float64)
    cdef const double[:, :, ::1] M1 = np.ascontiguousarray(M1_in, dtype=np.float64)
    cdef const double[:, :, ::1] M2 = np.ascontiguousarray(M2_in, dtype=np.float64)
    cdef Py_ssize_t n = c1.shape[0], p
    cdef int D = <int>c1.shape[1], i, j, k, it
    if D > 8:
        from ._pykernels import intersection_t2 as slow
        return slow(c1_in, M1_in, c2_in, M2_in, bound)
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double L[64]
    cdef double X[64]
    cdef double B[64]
    cdef double V[64]
    cdef double v[8]
    cdef double mu[8]
    cdef double w2mu[8]
    cdef double lo, hi, a, b, ga, gb, acc
    with nogil:
        for p in range(n):
            if not _chol(M1[p], L, D):
                out[p] = NAN
                continue
            # v = L^T (c2 - c1)
            for i in range(D):
                acc = 0.0
                for k in range(i, D):
                    acc += L[k * D + i] * (c2[p, k] - c1[p, k])
                v[i] = acc
            # X = L^-1 M2 (forward substitution, column by column)
            for j in range(D):
                for i in range(D):
                    acc = M2[p, i, j]
                    for k in range(i):
                        acc -= L[i * D + k] * X[k * D + j]
                    X[i * D + j] = acc / L[i * D + i]
            # B = X L^-T, i.e. solve L B^T = X^T
            for j in range(D):
                for i in range(D):
                    acc = X[j * D + i]
                    for k in range(i):
                        acc -= L[i * D + k] * B[j * D + k]
                    B[j * D + i] = acc / L[i * D + i]
            for i in range(D):
                for j in range(i + 1, D):
                    acc = 0.5 * (B[i * D + j] + B[j * D + i])
                    B[i * D + j] = acc
                    B[j * D + i] = acc
            _jacobi(B, V, D)
            for i in range(D):
                mu[i] = B[i * D + i]
                acc = 0.0
                for k in range(D):
                    acc += V[k * D + i] * v[k]
                w2mu[i] = acc * acc * mu[i]
            lo = 0.0
            hi = 1.0
            a = hi - _GOLDEN * (hi - lo)
            b = lo + _GOLDEN * (hi - lo)
            ga = _sep(w2mu, mu, a, D)
            gb = _sep(w2mu, mu, b, D)
            for it in range(48):
                if ga > bound or gb > bound:
                    break
                if ga > gb:
                    hi = b
                else:
                    lo = a
                a = hi - _GOLDEN * (hi - lo)
                b = lo + _GOLDEN * (hi - lo)
                ga = _sep(w2mu, mu, a, D)
                gb = _sep(w2mu, mu, b, D)
            out[p] = ga if ga > gb else gb
    return out_arr


def quad_any(P_in, C_in, S_in, ptr_in, idx_in, double bound):
    """out[p] = any over k in idx[ptr[p]:ptr[p+1]] of (P_p - C_k)^T S_k (P_p - C_k) <= bound."""
    cdef const double[:, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef const double[:, ::1] C = np.ascontiguousarray(C_in, dtype=np.float64)
    cdef const double[:, :, ::1] S = np.ascontiguousarray(S_in, dtype=np.float64)
    cdef const long long[::1] ptr = np.ascontiguousarray(ptr_in, dtype=np.int64)
    cdef const long long[::1] idx = np.ascontiguousarray(idx_in, dtype=np.int64)
    cdef Py_ssize_t n = P.shape[0], D = P.shape[1], p, e, a, b
    cdef long long k
    cdef double u[16]
    cdef double f, r
    out_arr = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] out = out_arr
    if D > 16:
        raise ValueError("dimension too large")
    with nogil:
        for p in range(n):
            for e in range(ptr[p], ptr[p + 1]):
                k = idx[e]
                for a in range(D):
                    u[a] = P[p, a] - C[k, a]
                f = 0.0
                for a in range(D):
                    r = 0.0
                    for b in range(D):
                        r += S[k, a, b] * u[b]
                    f += u[a] * r
                if f <= bound:
                    out[p] = True
                    break
    return out_arr
