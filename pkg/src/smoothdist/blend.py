"""Partition-of-unity blending of per-patch affine distance functions.

Each patch i has a quadratic f_i(x) = (x - c_i)^T M_i (x - c_i), weight
psi_i = mu(f_i), and local function v_i(x) = b_i - a_i.x. The field is
sum_i phi_i v_i with phi_i = psi_i / Psi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import DEFAULT_TOLERANCES
from .errors import DomainError, EmptyPatchList, OutsidePolytope

_CUTOFF = DEFAULT_TOLERANCES.mollifier_cutoff


def mollifier(sigma):
    """exp(-1 / (1 - sigma^2)) on |sigma| < 1, zero elsewhere."""
    s = np.asarray(sigma, dtype=float)
    out = np.zeros(s.shape)
    live = np.abs(s) < 1.0
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        out[live] = np.exp(-1.0 / (1.0 - s[live] ** 2))
    return out if out.ndim else float(out)


def _psi(f):
    """Mollifier on a patch quadratic, with the underflow cutoff near f = 1."""
    f = np.asarray(f, dtype=float)
    out = np.zeros(f.shape)
    live = f < 1.0 - _CUTOFF
    out[live] = np.exp(-1.0 / (1.0 - f[live] ** 2))
    return out


def kappa(sigma):
    """mu(sigma) sigma / (sigma^2 - 1)^2 for |sigma| < 1."""
    s = np.asarray(sigma, dtype=float)
    if np.any(np.abs(s) >= 1.0):
        raise DomainError("kappa is defined on |sigma| < 1 only")
    with np.errstate(under="ignore"):
        out = np.exp(-1.0 / (1.0 - s * s)) * s / (s * s - 1.0) ** 2
    return out if out.ndim else float(out)


def _kappa_cut(f):
    f = np.asarray(f, dtype=float)
    out = np.zeros(f.shape)
    live = f < 1.0 - _CUTOFF
    fl = f[live]
    out[live] = np.exp(-1.0 / (1.0 - fl * fl)) * fl / (fl * fl - 1.0) ** 2
    return out


@dataclass(frozen=True, eq=False)
class Patch:
    """Projected top ellipsoid with its representative hyperplane."""

    center: np.ndarray
    shape: np.ndarray
    a: np.ndarray
    b: float
    rep_index: int = -1
    node: int = -1

    def f(self, x) -> np.ndarray:
        u = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", u, self.shape, u)

    def v(self, x) -> np.ndarray:
        return self.b - np.asarray(x, dtype=float) @ self.a

    def contains(self, x) -> np.ndarray:
        return self.f(x) < 1.0


@dataclass(frozen=True)
class Contribution:
    patch_id: int
    f: float
    psi: float
    phi: float
    v: float


@dataclass(frozen=True)
class BlendResult:
    value: float
    gradient: np.ndarray
    Psi: float
    contributions: list = field(default_factory=list)
    leaf_patch: int = -1
    path_length: int = 0

    @property
    def witness(self) -> float:
        for c in self.contributions:
            if c.patch_id == self.leaf_patch:
                return c.v
        return float("nan")


def weights(patches, x):
    """(Psi, psi_i, phi_i) for the patches containing x."""
    if len(patches) == 0:
        raise EmptyPatchList("no patch contains the query point")
    f = np.array([p.f(x) for p in patches])
    psi = _psi(f)
    Psi = float(psi.sum())
    if Psi <= 0.0:
        raise EmptyPatchList("all containing patches have vanishing weight")
    return Psi, psi, psi / Psi


def blend_patches(patches, x):
    """Value and closed-form gradient from an explicit patch list."""
    x = np.asarray(x, dtype=float)
    Psi, psi, phi = weights(patches, x)
    f = np.array([p.f(x) for p in patches])
    v = np.array([p.v(x) for p in patches])
    A = np.array([p.a for p in patches])
    value = float(phi @ v)
    Mx = np.array([p.shape @ (x - p.center) for p in patches])
    grad = -(phi @ A) - (4.0 / Psi) * ((v - value) * _kappa_cut(f)) @ Mx
    return value, grad, Psi


def _tables(s):
    return s.query_tables() if hasattr(s, "query_tables") else s


def evaluate(s, q, *, original: bool = False) -> BlendResult:
    """Blended value and gradient at q (normalized coordinates unless ``original``)."""
    q = np.asarray(q, dtype=float)
    if original:
        q = s.transform.apply(q)
    tab = _tables(s)
    st, leaf, p0, pl, _, ids, f = kernels.locate(tab, q)
    if st != kernels.STATUS_OK:
        raise OutsidePolytope(f"query point {q.tolist()} is outside the polytope")
    value, grad, Psi = kernels.blend(tab, q, ids, f)
    if not Psi > 0.0:
        raise EmptyPatchList("query point is not covered by any weighted patch")
    psi = _psi(f)
    patch_a, patch_b = tab[10], tab[11]
    v = patch_b[ids] - patch_a[ids] @ q
    contributions = [Contribution(int(i), float(fi), float(pi), float(pi / Psi), float(vi))
                     for i, fi, pi, vi in zip(ids, f, psi, v)]
    if original:
        value = float(s.transform.distance_to_original(value))
    return BlendResult(float(value), np.asarray(grad, dtype=float), float(Psi), contributions, int(p0), int(pl))


eval = evaluate  # noqa: A001  (public name mirrors the operation)


def eval_gradient(s, q, *, original: bool = False) -> np.ndarray:
    return evaluate(s, q, original=original).gradient


def evaluate_many(s, Q):
    """Vectorized (value, grad, Psi, npatch, leaf_patch, witness, status, path_len)."""
    return kernels.evaluate_batch(_tables(s), np.atleast_2d(np.asarray(Q, dtype=float)))


def eval_hessian_fd(s, q, h: float = 1e-5, *, original: bool = False) -> np.ndarray:
    """Central first differences of the closed-form gradient, symmetrized."""
    q = np.asarray(q, dtype=float)
    if original:
        q = s.transform.apply(q)
    d = q.size
    P = np.vstack([q + h * e for e in np.eye(d)] + [q - h * e for e in np.eye(d)])
    _, G, _, _, _, _, st, _ = evaluate_many(s, P)
    if np.any(st != kernels.STATUS_OK):
        raise OutsidePolytope("Hessian stencil leaves the covered region")
    H = (G[:d] - G[d:]).T / (2.0 * h)
    H = 0.5 * (H + H.T)
    if original:
        H = H * s.transform.scale
    return H


def F_value(patch: Patch, x, context) -> float:
    """4/Psi (v_i - d~) psi_i f_i / (f_i^2 - 1)^2; ``context`` is a BlendResult or (Psi, d~)."""
    if isinstance(context, BlendResult):
        Psi, dt = context.Psi, context.value
    else:
        Psi, dt = context
    f = float(patch.f(x))
    return float(4.0 / Psi * (float(patch.v(x)) - dt) * _kappa_cut(f))


def weight_gradients(patches, x):
    """Closed-form gradients of psi_i and phi_i, shape (k, d) each."""
    x = np.asarray(x, dtype=float)
    Psi, psi, phi = weights(patches, x)
    f = np.array([p.f(x) for p in patches])
    Mx = np.array([p.shape @ (x - p.center) for p in patches])
    gpsi = -4.0 * _kappa_cut(f)[:, None] * Mx
    gPsi = gpsi.sum(axis=0)
    gphi = gpsi / Psi - psi[:, None] * gPsi[None, :] / Psi ** 2
    return gpsi, gphi
