"""Tolerances, scale constants and sampling budgets in one place."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class Tolerances:
    geometric: float = 1e-9
    unit_normal: float = 1e-12
    inside: float = 1e-12
    symmetry: float = 1e-12
    intersect: float = 1e-9
    mvee_volume: float = 1e-6
    mollifier_cutoff: float = 1e-8
    diameter_rel: float = 1e-6


@dataclass(frozen=True)
class SampleCounts:
    # base sample size is scale * eps^(-(d+1)/2)
    scale: float = 64.0
    min_samples: int = 512
    verify_rounds: int = 4
    residual: float = 5e-3
    top_probe: int = 32
    rep_probe: int = 32
    # greedy marks coverage at this fraction of the verified scale
    margin: float = 0.8
    probes_per_node: int = 24


def covering_lambda(dim: int) -> float:
    """Covering scale for ellipsoids living in the lifted space R^(dim+1)."""
    return 1.0 / (2.0 * math.sqrt(dim + 1))


def expansion_beta(lam: float) -> float:
    return (3.0 + lam) / (1.0 - lam)


def packing_lambda(dim: int, lam_c: float | None = None) -> float:
    if lam_c is None:
        lam_c = covering_lambda(dim)
    return lam_c / (4.0 * expansion_beta(lam_c) * math.sqrt(dim + 1))


@dataclass(frozen=True)
class BuildConfig:
    epsilon: float
    seed: int = 0
    lambda_c: float | None = None
    lambda_p: float | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    samples: SampleCounts = field(default_factory=SampleCounts)

    def resolved(self, dim: int) -> "BuildConfig":
        lam_c = self.lambda_c if self.lambda_c is not None else covering_lambda(dim)
        lam_p = self.lambda_p if self.lambda_p is not None else packing_lambda(dim, lam_c)
        return replace(self, lambda_c=lam_c, lambda_p=lam_p)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BuildConfig":
        data = dict(data)
        tol = Tolerances(**data.pop("tolerances", {}))
        samples = SampleCounts(**data.pop("samples", {}))
        return cls(tolerances=tol, samples=samples, **data)


DEFAULT_TOLERANCES = Tolerances()
