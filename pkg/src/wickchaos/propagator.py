"""Chaos propagation for ``(d/dt - Lap) U + Q <> U = F, U(0) = G``.

The Wick coupling makes the coefficient equations lower triangular in the
multi-index order: ``u_gamma`` solves the deterministic problem with
potential ``q_0`` and force ``f_gamma - sum_{beta < gamma} q_{gamma-beta} u_beta``.
:func:`solve_chaos_system` runs that recursion level by level;
:func:`solve_block_oracle` time-steps the fully coupled system instead.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .chaos import ChaosField, estimate_critical_exponent, level_sums
from .multiindex import (
    ZERO,
    MultiIndex,
    Mode,
    canonical_order,
    count_decompositions,
    enumerate_indices,
    find_s,
    log_weight_2N,
    lower_set,
    strictly_less,
    try_subtract,
    weighted_decomposition_sum,
)
from .pde import OperatorSpec, SemigroupEnvelope, SingularStepMatrix, _to_grid, _unknowns, solve_deterministic

log = logging.getLogger(__name__)

BLOCK_LIMIT = 100_000
ENUMERATION_BUDGET = 1_000_000


class LevelSolveError(ArithmeticError):
    def __init__(self, gamma: MultiIndex, cause: Exception):
        super().__init__(f"solve failed for index {gamma}: {cause}")
        self.gamma = gamma


class BlockTooLarge(ValueError):
    pass


@dataclass
class ScenarioData:
    Q: ChaosField
    F: ChaosField
    G: ChaosField
    op: OperatorSpec
    env: SemigroupEnvelope
    warnings: list = field(default_factory=list)

    @property
    def q0(self) -> np.ndarray:
        return self.Q.coefficient(ZERO)

    @property
    def indices(self) -> list[MultiIndex]:
        return enumerate_indices(self.Q.truncation)

    def contraction_product(self) -> float:
        """``Mtilde(T) * ||q_0||_inf``."""
        return float(self.env.Mtilde(self.op.T)) * self.env.q0_inf


def make_scenario(Q: ChaosField, F: ChaosField, G: ChaosField, op: OperatorSpec,
                  M: float = 1.0, w: float = 0.0) -> ScenarioData:
    """Bundle the data, derive the envelope from ``q_0`` and check the hypotheses."""
    for X, name in ((F, "F"), (G, "G")):
        if X.grid != Q.grid or X.truncation != Q.truncation:
            raise ValueError(f"{name} does not share the grid/truncation of Q")
    if Q.grid != op.grid:
        raise ValueError("operator grid differs from the data grid")
    if Q.is_trajectory or G.is_trajectory:
        raise ValueError("Q and G must be stationary")
    if F.is_trajectory and F.value_shape[0] != op.steps + 1:
        raise ValueError("F trajectory length does not match the number of time steps")
    q0_inf = Q.sup_norm(ZERO)
    env = SemigroupEnvelope(M, w, q0_inf)
    sc = ScenarioData(Q, F, G, op, env)
    for gamma in Q.indices():
        if Q.sup_norm(gamma) > q0_inf * (1 + 1e-12):
            sc.warnings.append(f"||q_{gamma}||_inf = {Q.sup_norm(gamma):.6g} exceeds ||q_0||_inf = {q0_inf:.6g}")
    prod = sc.contraction_product()
    if abs(prod - 1.0) <= 1e-6:
        sc.warnings.append(f"Mtilde(T)*||q_0||_inf = {prod:.12g} is within 1e-6 of 1")
    for msg in sc.warnings:
        log.warning(msg)
    return sc


def _force_trajectory(sc: ScenarioData, gamma: MultiIndex) -> np.ndarray:
    K = sc.op.steps
    f = sc.F.coefficient(gamma)
    return np.broadcast_to(f, (K + 1, sc.op.grid.J + 1)).copy() if f.ndim == 1 else f.copy()


def coupling_terms(sc: ScenarioData, gamma: MultiIndex) -> list[tuple[MultiIndex, MultiIndex]]:
    """``(beta, gamma - beta)`` for admitted ``beta < gamma`` with a stored ``q_{gamma-beta}``."""
    terms = []
    for beta in lower_set(gamma):
        if beta == gamma:
            continue
        delta = try_subtract(gamma, beta)
        if delta in sc.Q:
            terms.append((beta, delta))
    return terms


def effective_force(sc: ScenarioData, gamma: MultiIndex, solved: dict) -> np.ndarray:
    """``f_gamma - sum_{beta < gamma} q_{gamma-beta} u_beta`` per time step, summed in canonical order of beta."""
    ftilde = _force_trajectory(sc, gamma)
    for beta, delta in coupling_terms(sc, gamma):
        ftilde -= sc.Q.coefficients[delta] * solved[beta]
    return ftilde


def dropped_couplings(sc: ScenarioData) -> int:
    """Number of Wick couplings ``q_{gamma-beta} u_beta`` lost because ``gamma-beta`` is not admitted."""
    trunc = sc.Q.truncation
    return sum(1 for g in sc.indices for b in lower_set(g)
               if b != g and not trunc.admits(try_subtract(g, b)))


def solve_chaos_system(sc: ScenarioData, threads: int = 1,
                       level_order: Optional[Callable[[list], list]] = None) -> ChaosField:
    """Solve the triangular system recursively in increasing ``|gamma|``.

    Within a level the coefficients are independent, so they may be solved
    in any order (``level_order`` permutes them) or concurrently.
    """
    op = sc.op
    q0 = sc.q0
    solved: dict[MultiIndex, np.ndarray] = {}
    levels: dict[int, list[MultiIndex]] = {}
    for gamma in sc.indices:
        levels.setdefault(gamma.length, []).append(gamma)

    def one(gamma: MultiIndex) -> np.ndarray:
        ftilde = effective_force(sc, gamma, solved)
        try:
            return solve_deterministic(op, q0, ftilde, sc.G.coefficient(gamma))
        except (SingularStepMatrix, FloatingPointError) as exc:
            raise LevelSolveError(gamma, exc) from exc

    for lvl in sorted(levels):
        batch = list(levels[lvl])
        if level_order is not None:
            batch = level_order(batch)
        if threads > 1 and len(batch) > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(one, batch))
        else:
            results = [one(g) for g in batch]
        solved.update(zip(batch, results))
    return ChaosField(sc.Q.truncation, sc.Q.grid, solved, op.dt)


def solve_block_oracle(sc: ScenarioData, limit: int = BLOCK_LIMIT) -> ChaosField:
    """Time-step the fully coupled system over all coefficients at once.

    The block operator has ``Lap - diag(q_0)`` on the diagonal and
    ``-diag(q_{gamma-beta})`` below it; each step is one sparse LU solve.
    """
    op, grid = sc.op, sc.op.grid
    idx = sc.indices
    sl = _unknowns(grid)
    n_loc = len(range(*sl.indices(grid.J + 1)))
    N = len(idx) * n_loc
    if N > limit:
        raise BlockTooLarge(f"block system of size {N} exceeds limit {limit}")
    pos = {g: i for i, g in enumerate(idx)}

    inv_h2 = 1.0 / grid.h ** 2
    lap = sp.diags([np.full(n_loc - 1, inv_h2), np.full(n_loc, -2 * inv_h2), np.full(n_loc - 1, inv_h2)],
                   [-1, 0, 1], format="lil")
    if grid.boundary == "periodic":
        lap[0, n_loc - 1] = inv_h2
        lap[n_loc - 1, 0] = inv_h2
    lap = lap.tocsr()
    blocks = [[None] * len(idx) for _ in idx]
    for g in idx:
        i = pos[g]
        blocks[i][i] = lap - sp.diags(sc.Q.coefficient(ZERO)[sl])
        for beta in lower_set(g):
            if beta == g:
                continue
            delta = try_subtract(g, beta)
            if delta in sc.Q:
                blocks[i][pos[beta]] = -sp.diags(sc.Q.coefficients[delta][sl])
    B = sp.bmat(blocks, format="csc")
    eye = sp.identity(N, format="csc")
    theta, dt, K = op.theta, op.dt, op.steps
    lhs = splu((eye - theta * dt * B).tocsc())
    expl = (eye + (1 - theta) * dt * B).tocsr()

    F = np.stack([_force_trajectory(sc, g)[:, sl] for g in idx], axis=1).reshape(K + 1, N)
    U = np.empty((K + 1, N))
    U[0] = np.concatenate([sc.G.coefficient(g)[sl] for g in idx])
    for k in range(K):
        fk = F[k + 1] if theta == 1.0 else theta * F[k + 1] + (1 - theta) * F[k]
        U[k + 1] = lhs.solve(expl @ U[k] + dt * fk)
    U = U.reshape(K + 1, len(idx), n_loc)
    return ChaosField(sc.Q.truncation, grid, {g: _to_grid(grid, U[:, pos[g], :]) for g in idx}, op.dt)


def max_relative_deviation(U: ChaosField, V: ChaosField) -> float:
    """Max over coefficients of ``sup_t ||u - v|| / sup_t ||u||`` (absolute when ``u == 0``)."""
    worst = 0.0
    for g in set(U.indices()) | set(V.indices()):
        diff = float(np.max(U.grid.l2_norm(U.coefficient(g) - V.coefficient(g))))
        scale = U.coefficient_norm(g)
        worst = max(worst, diff / scale if scale > 0 else diff)
    return worst


@dataclass
class BoundRecord:
    index: MultiIndex
    lhs: float
    rhs_exact: Optional[float]
    rhs_count: float
    rhs_coarse: float

    @property
    def ratio_exact(self) -> Optional[float]:
        return None if self.rhs_exact is None else _ratio(self.lhs, self.rhs_exact)

    @property
    def ratio_coarse(self) -> float:
        return _ratio(self.lhs, self.rhs_coarse)


def _ratio(a: float, b: float) -> float:
    if b > 0:
        return a / b
    return 0.0 if a == 0 else math.inf


CSV_FIELDS = ["index", "level", "lhs", "rhs_exact", "rhs_count", "rhs_coarse", "ratio_exact", "ratio_coarse"]


def index_label(gamma: MultiIndex, m: int) -> str:
    return "(" + ",".join(map(str, gamma.dense(m))) + ")"


def fmt(x) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


@dataclass
class BoundReport:
    t: float
    records: list
    tol: float = 1e-6

    @property
    def max_ratio_exact(self) -> float:
        vals = [r.ratio_exact for r in self.records if r.ratio_exact is not None]
        return max(vals) if vals else 0.0

    @property
    def ordering_holds(self) -> bool:
        return all(r.rhs_exact is None or r.rhs_exact <= r.rhs_count * (1 + 1e-12) + 1e-300 for r in self.records) \
            and all(r.rhs_count <= r.rhs_coarse * (1 + 1e-12) + 1e-300 for r in self.records)

    @property
    def passed(self) -> bool:
        return self.max_ratio_exact <= 1 + self.tol and self.ordering_holds

    def rows(self, m: int) -> list[dict]:
        return [{
            "index": index_label(r.index, m),
            "level": r.index.length,
            "lhs": r.lhs, "rhs_exact": r.rhs_exact, "rhs_count": r.rhs_count, "rhs_coarse": r.rhs_coarse,
            "ratio_exact": r.ratio_exact, "ratio_coarse": r.ratio_coarse,
        } for r in self.records]

    def to_csv(self, m: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for row in self.rows(m):
            w.writerow([row["index"], row["level"]] + [fmt(row[k]) for k in CSV_FIELDS[2:]])
        return buf.getvalue()

    def to_dict(self, m: int) -> dict:
        return {"t": self.t, "tol": self.tol, "max_ratio_exact": self.max_ratio_exact,
                "ordering_holds": self.ordering_holds, "passed": self.passed, "records": self.rows(m)}


def data_amplitudes(sc: ScenarioData, t: float) -> dict:
    """``a_gamma(t) = ||g_gamma|| + t * sup_s ||f_gamma(s)||`` for every admitted index."""
    return {g: sc.G.coefficient_norm(g) + t * sc.F.coefficient_norm(g) for g in sc.indices}


def verify_eq3_bounds(sc: ScenarioData, U: ChaosField, t: float, tol: float = 1e-6,
                      budget: int = ENUMERATION_BUDGET) -> BoundReport:
    """Compare ``||u_gamma(t)||`` with the coefficient bound at time ``t``.

    ``rhs_exact`` uses the actual ``||q_theta||_inf`` in the ordered
    decomposition sums; ``rhs_count`` replaces each product by
    ``||q_0||^k`` times the number of decompositions; ``rhs_coarse`` further
    replaces that count by ``2^{k |gamma - beta|}``.
    """
    k_t = sc.op.step_index(t)
    Mt = float(sc.env.M_t(t))
    Mtil = float(sc.env.Mtilde(t))
    q0n = sc.env.q0_inf
    qnorms = {g: sc.Q.sup_norm(g) for g in sc.Q.indices() if not g.is_zero()}
    a = data_amplitudes(sc, t)
    records = []
    for gamma in sc.indices:
        lhs = float(U.grid.l2_norm(U.coefficient(gamma)[k_t]))
        exact, count_sum, coarse = a[gamma], a[gamma], a[gamma]
        exact_ok = True
        for k in range(1, gamma.length + 1):
            s_exact = s_count = s_coarse = 0.0
            for beta in lower_set(gamma):
                if not strictly_less(beta, gamma) or beta.length > gamma.length - k or a[beta] == 0.0:
                    continue
                delta = try_subtract(gamma, beta)
                n_tuples = count_decompositions(delta, k, Mode.NONZERO)
                s_count += a[beta] * n_tuples * q0n ** k
                s_coarse += a[beta] * 2.0 ** (k * delta.length) * q0n ** k
                if n_tuples > budget:
                    exact_ok = False
                elif exact_ok:
                    s_exact += a[beta] * weighted_decomposition_sum(delta, k, qnorms)
            exact += Mtil ** k * s_exact
            count_sum += Mtil ** k * s_count
            coarse += Mtil ** k * s_coarse
        records.append(BoundRecord(gamma, lhs, Mt * exact if exact_ok else None, Mt * count_sum, Mt * coarse))
    return BoundReport(float(t), records, tol)


@dataclass
class SummabilityRow:
    p: float
    S1: float
    S2: float
    data_sum: float
    S1_levels: list
    S2_levels: list
    U_levels: list
    U_sum: float
    min_decay: float

    @property
    def decays(self) -> bool:
        return self.min_decay >= 2.0


@dataclass
class SummabilityReport:
    T: float
    M_T: float
    Mtilde_T: float
    contraction: float
    distance_from_one: float
    geometric_branch: str
    s: float
    s1: float
    p2: Optional[float]
    p3: Optional[float]
    threshold: float
    rows: list

    def row_at(self, p: float) -> SummabilityRow:
        for r in self.rows:
            if r.p == p:
                return r
        raise KeyError(p)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("T", "M_T", "Mtilde_T", "contraction", "distance_from_one",
                                           "geometric_branch", "s", "s1", "p2", "p3", "threshold")}
        d["rows"] = [dict(r.__dict__, decays=r.decays) for r in self.rows]
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "S1", "S2", "S1_plus_T2_S2", "U_sum", "min_decay", "decays"])
        for r in self.rows:
            w.writerow([fmt(r.p), fmt(r.S1), fmt(r.S2), fmt(r.data_sum), fmt(r.U_sum), fmt(r.min_decay),
                        str(r.decays).lower()])
        return buf.getvalue()


def _min_decay(levels: Sequence[float]) -> float:
    worst = math.inf
    for prev, cur in zip(levels, levels[1:]):
        if cur == 0.0:
            continue
        worst = min(worst, prev / cur)
    return worst


def geometric_level_factor(c: float, level: int) -> float:
    """``sum_{k=1}^{level} c^k``; closed form when ``c != 1``."""
    if c == 1.0:
        return float(level)
    return c * (1 - c ** level) / (1 - c)


def summability_s1(c: float) -> float:
    """``max(0, log2(c e))``, so that ``|gamma| c^|gamma| <= (2N)^{s1 gamma}`` for every ``gamma``.

    Uses ``k <= e^k``; the constant is sufficient, not minimal.
    """
    if c <= 0:
        return 0.0
    return max(0.0, math.log2(c * math.e))


def summability_report(sc: ScenarioData, U: ChaosField, p_list: Sequence[float],
                       p_grid: Optional[Sequence[float]] = None) -> SummabilityReport:
    """Truncated analogues of the weighted sums used to show ``U`` has finite norm.

    For each ``p``: the data sums ``S1 = sum ||g||^2 (2N)^{-p}``, ``S2`` (same for
    ``f``), and the per-level weighted sums of ``||u_gamma||^2``. The
    reported threshold is ``max(p2, p3, s + 3, 3 s1 + 6)`` with ``s`` from
    ``c = 4`` and ``s1`` from :func:`summability_s1` at ``c = (Mtilde(T) ||q_0||)^2``.
    """
    T = sc.op.T
    Mtil = float(sc.env.Mtilde(T))
    prod = Mtil * sc.env.q0_inf
    c2 = prod * prod
    s = find_s(4.0)
    s1 = summability_s1(c2)
    p_grid = list(p_grid) if p_grid is not None else [0.5 * i for i in range(0, 41)]
    p2 = estimate_critical_exponent(sc.F, p_grid)
    p3 = estimate_critical_exponent(sc.G, p_grid)
    threshold = max(p2 or 0.0, p3 or 0.0, s + 3, 3 * s1 + 6)
    rows = []
    for p in sorted(set(float(x) for x in p_list) | {threshold}):
        S1 = weighted_data_sum(sc.G, sc.indices, p)
        S2 = weighted_data_sum(sc.F, sc.indices, p)
        lv = level_sums(U, p)
        rows.append(SummabilityRow(p, S1, S2, S1 + T * T * S2, level_sums(sc.G, p), level_sums(sc.F, p),
                                   lv, math.fsum(lv), _min_decay(lv)))
    return SummabilityReport(
        T=T, M_T=float(sc.env.M_t(T)), Mtilde_T=Mtil, contraction=prod,
        distance_from_one=abs(prod - 1.0),
        geometric_branch="contractive" if c2 < 1 else ("critical" if c2 == 1 else "expansive"),
        s=s, s1=s1, p2=p2, p3=p3, threshold=threshold, rows=rows,
    )


def weighted_data_sum(X: ChaosField, indices: Sequence[MultiIndex], p: float) -> float:
    """``sum ||x_gamma||^2 (2N)^{-p gamma}`` accumulated index by index."""
    total = 0.0
    for g in indices:
        total += X.coefficient_norm(g) ** 2 * math.exp(-p * log_weight_2N(g))
    return total


def norms_csv(U: ChaosField) -> str:
    """Per-coefficient table: index, level, final-time L2 norm, sup-in-time L2 norm."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "level", "l2_final", "l2_sup"])
    m = U.truncation.m
    for g in canonical_order(U.coefficients):
        v = U.coefficients[g]
        nrm = U.grid.l2_norm(v)
        w.writerow([index_label(g, m), g.length, fmt(nrm[-1]), fmt(np.max(nrm))])
    return buf.getvalue()


def report_json(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, MultiIndex):
        return list(o.dense())
    raise TypeError(type(o))
