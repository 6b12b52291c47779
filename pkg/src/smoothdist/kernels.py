"""Backend selection for the hot kernels.

The compiled extension is used when it imports; setting
``SMOOTHDIST_PURE_PYTHON=1`` forces the numpy reference path.
"""

from __future__ import annotations

import os

from . import _pykernels

STATUS_OK = _pykernels.STATUS_OK
STATUS_OUTSIDE = _pykernels.STATUS_OUTSIDE
STATUS_UNCOVERED = _pykernels.STATUS_UNCOVERED

_compiled = None
if os.environ.get("SMOOTHDIST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_active = _compiled if _compiled is not None else _pykernels
BACKEND = _active.BACKEND


def available_backends() -> dict:
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def backend(name: str | None = None):
    if name is None:
        return _active
    return available_backends()[name]


def inscribed_shape(G, tol, max_iter):
    return _active.inscribed_shape(G, tol, max_iter)


def intersection_t2(c1, M1, c2, M2, bound=float("inf")):
    return _active.intersection_t2(c1, M1, c2, M2, bound)


def quad_any(P, C, S, ptr, idx, bound):
    return _active.quad_any(P, C, S, ptr, idx, bound)


def locate(tab, q):
    return _active.locate(tab, q)


def evaluate_batch(tab, Q):
    return _active.evaluate_batch(tab, Q)


blend = _pykernels.blend
