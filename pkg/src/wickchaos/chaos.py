"""Truncated chaos expansions on a 1D grid, the Wick product and Kondratiev-type norms."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .multiindex import (
    MultiIndex,
    TruncationSpec,
    ZERO,
    add,
    canonical_order,
    log_weight_2N,
)

BOUNDARIES = ("dirichlet", "periodic")


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``x_j = j h`` on ``[0, 1]``, ``h = 1/J``."""

    J: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.J < 3:
            raise ValueError("J must be >= 3")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")

    @property
    def h(self) -> float:
        return 1.0 / self.J

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.J + 1) * self.h

    @property
    def weights(self) -> np.ndarray:
        # trapezoid; for periodic fields this is h * sum over the J distinct nodes
        w = np.full(self.J + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def l2_norm(self, values) -> np.ndarray:
        """Discrete L2(0,1) norm along the last axis."""
        values = np.asarray(values, dtype=float)
        return np.sqrt(np.sum(self.weights * values * values, axis=-1))

    def to_dict(self) -> dict:
        return {"J": self.J, "boundary": self.boundary}


@dataclass
class ChaosField:
    """Map from admitted multi-indices to grid values; missing keys are zero.

    Stationary coefficients have shape ``(J+1,)``; trajectories have shape
    ``(K+1, J+1)`` sampled every ``dt``.
    """

    truncation: TruncationSpec
    grid: Grid
    coefficients: dict = field(default_factory=dict)
    dt: Optional[float] = None

    def __post_init__(self):
        shape = None
        coeffs = {}
        for gamma in canonical_order(self.coefficients):
            if not self.truncation.admits(gamma):
                raise ValueError(f"index {gamma} is not admitted by {self.truncation}")
            v = np.asarray(self.coefficients[gamma], dtype=float)
            if v.shape[-1] != self.grid.J + 1 or v.ndim not in (1, 2):
                raise GridMismatch(f"coefficient {gamma} has shape {v.shape}, grid J={self.grid.J}")
            if shape is not None and v.shape != shape:
                raise GridMismatch(f"coefficient {gamma} has shape {v.shape}, expected {shape}")
            shape = v.shape
            if self.grid.boundary == "dirichlet" and (np.any(v[..., 0] != 0) or np.any(v[..., -1] != 0)):
                raise ValueError(f"dirichlet coefficient {gamma} must vanish at both endpoints")
            coeffs[gamma] = v
        self.coefficients = coeffs
        if shape is not None and len(shape) == 2 and self.dt is None:
            raise ValueError("trajectory coefficients need dt")

    @property
    def is_trajectory(self) -> bool:
        return any(v.ndim == 2 for v in self.coefficients.values())

    @property
    def value_shape(self) -> tuple:
        for v in self.coefficients.values():
            return v.shape
        return (self.grid.J + 1,)

    def indices(self) -> list[MultiIndex]:
        return list(self.coefficients)

    def coefficient(self, gamma: MultiIndex) -> np.ndarray:
        v = self.coefficients.get(gamma)
        return np.zeros(self.value_shape) if v is None else v

    def __contains__(self, gamma):
        return gamma in self.coefficients

    def coefficient_norm(self, gamma: MultiIndex) -> float:
        """Spatial L2 norm; for trajectories the sup over time steps."""
        v = self.coefficients.get(gamma)
        if v is None:
            return 0.0
        return float(np.max(self.grid.l2_norm(v)))

    def sup_norm(self, gamma: MultiIndex) -> float:
        v = self.coefficients.get(gamma)
        return 0.0 if v is None else float(np.max(np.abs(v)))

    def scaled(self, c: float) -> "ChaosField":
        return ChaosField(self.truncation, self.grid, {g: c * v for g, v in self.coefficients.items()}, self.dt)

    def to_json(self) -> str:
        m = self.truncation.m
        doc = {
            "truncation": self.truncation.to_dict(),
            "grid": self.grid.to_dict(),
            "dt": self.dt,
            "coefficients": [
                {"index": list(g.dense(m)), "values": self.coefficients[g].tolist()}
                for g in canonical_order(self.coefficients)
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ChaosField":
        doc = json.loads(text)
        coeffs = {MultiIndex.from_dense(c["index"]): np.array(c["values"], dtype=float)
                  for c in doc["coefficients"]}
        return cls(TruncationSpec.from_dict(doc["truncation"]), Grid(**doc["grid"]), coeffs, doc.get("dt"))


def check_compatible(F: ChaosField, G: ChaosField):
    if F.grid != G.grid:
        raise GridMismatch(f"grids differ: {F.grid} vs {G.grid}")
    if F.truncation != G.truncation:
        raise GridMismatch(f"truncations differ: {F.truncation} vs {G.truncation}")
    if F.is_trajectory and G.is_trajectory and F.value_shape != G.value_shape:
        raise GridMismatch("trajectories have different numbers of time steps")


def wick_product(F: ChaosField, G: ChaosField, with_dropped: bool = False):
    """Coefficientwise convolution ``(F<>G)_gamma = sum_{a+b=gamma} f_a g_b``.

    Contributions landing outside the truncation are dropped. With
    ``with_dropped=True`` also returns the L2 norm of the dropped mass.
    Terms for each output index are accumulated in canonical order of ``a``.
    """
    check_compatible(F, G)
    out: dict = {}
    dropped: dict = {}
    for a in canonical_order(F.coefficients):
        fa = F.coefficients[a]
        for b in canonical_order(G.coefficients):
            gamma = add(a, b)
            target = out if F.truncation.admits(gamma) else dropped
            term = fa * G.coefficients[b]
            if gamma in target:
                target[gamma] = target[gamma] + term
            else:
                target[gamma] = term
    dt = F.dt if F.is_trajectory else G.dt
    result = ChaosField(F.truncation, F.grid, out, dt)
    if not with_dropped:
        return result
    mass = math.fsum(float(np.max(F.grid.l2_norm(v))) ** 2 for v in dropped.values())
    return result, math.sqrt(mass)


@dataclass
class NormReport:
    p: float
    partial_sum: float
    terms_by_level: list
    stabilized: bool
    tol: float

    def to_dict(self) -> dict:
        return {"p": self.p, "partial_sum": self.partial_sum, "terms_by_level": list(self.terms_by_level),
                "stabilized": self.stabilized, "tol": self.tol}


def level_sums(F: ChaosField, p: float, at_step: Optional[int] = None) -> list[float]:
    """``sum_{|gamma|=l} ||f_gamma||^2 (2N)^{-p gamma}`` for ``l = 0..n``.

    Trajectory coefficients use the sup-in-time L2 norm unless ``at_step`` is given.
    """
    n = max(F.truncation.n if F.truncation.shape.value == "total" else F.truncation.n * F.truncation.m, 0)
    buckets: list[list[float]] = [[] for _ in range(n + 1)]
    for gamma, v in F.coefficients.items():
        if v.ndim == 2 and at_step is not None:
            nrm = float(F.grid.l2_norm(v[at_step]))
        else:
            nrm = float(np.max(F.grid.l2_norm(v)))
        buckets[gamma.length].append(nrm * nrm * math.exp(-p * log_weight_2N(gamma)))
    return [math.fsum(b) for b in buckets]


def kondratiev_norm_sq(F: ChaosField, p: float, at_step: Optional[int] = None,
                       tol: float = 1e-8) -> NormReport:
    """Squared weighted norm ``sum_gamma ||f_gamma||^2 (2N)^{-p gamma}`` with per-level terms."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    levels = level_sums(F, p, at_step)
    total = math.fsum(levels)
    stabilized = levels[-1] <= tol * total if total > 0 else True
    return NormReport(p, total, levels, stabilized, tol)


def _decays(levels: Sequence[float], stab_tol: float) -> bool:
    tail = list(levels[-3:])
    for prev, cur in zip(tail, tail[1:]):
        if prev == 0.0:
            if cur != 0.0:
                return False
            continue
        if cur / prev >= 1.0 - stab_tol:
            return False
    return True


def estimate_critical_exponent(F: ChaosField, p_grid: Sequence[float], stab_tol: float = 0.05) -> Optional[float]:
    """Smallest ``p`` in ``p_grid`` whose level sums decay geometrically over the last three levels.

    Returns ``None`` when no grid point qualifies. This is a truncation
    heuristic: a finite expansion cannot certify convergence of the full sum.
    """
    p_grid = list(p_grid)
    if any(b <= a for a, b in zip(p_grid, p_grid[1:])):
        raise ValueError("p_grid must be increasing")
    for p in p_grid:
        if _decays(level_sums(F, p), stab_tol):
            return float(p)
    return None


def constant_field(truncation: TruncationSpec, grid: Grid, coefficients: dict, dt=None) -> ChaosField:
    """Build a field whose coefficients are constants in x (scalars broadcast onto the grid)."""
    vals = {}
    for g, c in coefficients.items():
        v = np.full(grid.J + 1, float(c))
        if grid.boundary == "dirichlet":
            v[0] = v[-1] = 0.0
        vals[g] = v
    return ChaosField(truncation, grid, vals, dt)


__all__ = [
    "Grid", "ChaosField", "NormReport", "GridMismatch", "wick_product", "kondratiev_norm_sq",
    "level_sums", "estimate_critical_exponent", "constant_field", "ZERO",
]
