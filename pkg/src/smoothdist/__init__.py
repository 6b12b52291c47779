"""Smooth absolute-error approximations of the boundary distance of a convex polytope."""

from .blend import BlendResult, Patch, eval_gradient, eval_hessian_fd, evaluate, mollifier
from .config import BuildConfig, Tolerances
from .dag import DagStructure, build_dag, build_for, patches_at, ray_shoot_descend
from .kernels import BACKEND
from .polytope import Polytope, exact_boundary_distance, lift, normalize

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BlendResult", "BuildConfig", "DagStructure", "Patch", "Polytope", "Tolerances",
    "build_dag", "build_for", "eval_gradient", "eval_hessian_fd", "evaluate",
    "exact_boundary_distance", "lift", "mollifier", "normalize", "patches_at", "ray_shoot_descend",
]
