"""Theta-scheme solver for ``(d/dt - Lap) u + q u = f`` on [0, 1] and the stability envelopes.

The Laplacian is the standard 3-point stencil with either homogeneous
Dirichlet ends (unknowns are the interior nodes) or periodic wrap (node J
duplicates node 0). Each step is a tridiagonal solve factored once with
LAPACK ``gttrf``; the periodic corner entries are handled by Sherman-Morrison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import lapack

from .chaos import Grid

THETA = {"backward_euler": 1.0, "crank_nicolson": 0.5}
KAPPA_EPS = 1e-12


class SingularStepMatrix(ArithmeticError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"singular step matrix at step {step} {detail}".rstrip())
        self.step = step


class QuadratureNotConverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    grid: Grid
    dt: float
    T: float
    scheme: str = "crank_nicolson"
    kind: str = "laplacian"

    def __post_init__(self):
        if self.scheme not in THETA:
            raise ValueError(f"scheme must be one of {sorted(THETA)}")
        if self.kind != "laplacian":
            raise ValueError("only the Laplacian is supported")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if abs(self.steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def theta(self) -> float:
        return THETA[self.scheme]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def step_index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if not 0 <= k <= self.steps or abs(k * self.dt - t) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"t={t} is not a grid time")
        return k


def _apply(B_diag: np.ndarray, inv_h2: float, u: np.ndarray, periodic: bool) -> np.ndarray:
    """``(A - diag(q)) u`` on the unknowns, vectorized over leading axes."""
    out = -2.0 * inv_h2 * u + B_diag * u
    if periodic:
        out += inv_h2 * (np.roll(u, 1, axis=-1) + np.roll(u, -1, axis=-1))
    else:
        out[..., 1:] += inv_h2 * u[..., :-1]
        out[..., :-1] += inv_h2 * u[..., 1:]
    return out


class _StepSolver:
    """Factored ``(I - theta dt (A - diag q))`` on the unknowns."""

    def __init__(self, q: np.ndarray, grid: Grid, dt: float, theta: float):
        self.periodic = grid.boundary == "periodic"
        self.inv_h2 = 1.0 / grid.h ** 2
        self.neg_q = -q
        c = theta * dt
        n = q.size
        d = 1.0 + c * (2.0 * self.inv_h2 + q)
        off = np.full(n - 1, -c * self.inv_h2)
        if self.periodic:
            # cyclic matrix = T + u v^T with corners -c/h^2; fold them into the diagonal
            corner = -c * self.inv_h2
            self.gamma = -d[0]
            d = d.copy()
            d[0] -= self.gamma
            d[-1] -= corner * corner / self.gamma
            self.u = np.zeros(n)
            self.u[0], self.u[-1] = self.gamma, corner
            self.v = np.zeros(n)
            self.v[0], self.v[-1] = 1.0, corner / self.gamma
        dl, dd, du, du2, ipiv, info = lapack.dgttrf(off, d, off.copy())
        if info != 0:
            raise SingularStepMatrix(0, f"(pivot {info})")
        self.factors = (dl, dd, du, du2, ipiv)
        if self.periodic:
            self.z = self._tri(self.u)
            denom = 1.0 + self.v @ self.z
            if denom == 0.0:
                raise SingularStepMatrix(0, "(cyclic correction)")
            self.denom = denom

    def _tri(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.dgttrs(*self.factors, b[:, None] if b.ndim == 1 else b)
        if info != 0:
            raise SingularStepMatrix(0, f"(gttrs info {info})")
        return x[:, 0] if b.ndim == 1 else x

    def solve(self, b: np.ndarray) -> np.ndarray:
        y = self._tri(b)
        if self.periodic:
            y = y - self.z * ((self.v @ y) / self.denom)
        return y

    def apply_B(self, u: np.ndarray) -> np.ndarray:
        return _apply(self.neg_q, self.inv_h2, u, self.periodic)


def _unknowns(grid: Grid) -> slice:
    return slice(1, grid.J) if grid.boundary == "dirichlet" else slice(0, grid.J)


def _to_grid(grid: Grid, u_inner: np.ndarray) -> np.ndarray:
    out = np.zeros(u_inner.shape[:-1] + (grid.J + 1,))
    if grid.boundary == "dirichlet":
        out[..., 1:grid.J] = u_inner
    else:
        out[..., :grid.J] = u_inner
        out[..., grid.J] = u_inner[..., 0]
    return out


def solve_deterministic(op: OperatorSpec, q, f, g) -> np.ndarray:
    """Time-step ``u' = Lap u - q u + f``, ``u(0) = g`` with the theta-scheme.

    ``q`` and ``g`` are grid arrays of length ``J+1``; ``f`` is ``None``, a
    stationary grid array, or a trajectory of shape ``(steps+1, J+1)``.
    Returns the trajectory, shape ``(steps+1, J+1)``. Boundary values of the
    data are ignored for Dirichlet grids.
    """
    grid = op.grid
    sl = _unknowns(grid)
    theta, dt, K = op.theta, op.dt, op.steps
    q = np.asarray(q, dtype=float)[sl]
    g = np.asarray(g, dtype=float)
    if f is None:
        f = np.zeros(grid.J + 1)
    f = np.asarray(f, dtype=float)
    if f.ndim == 2 and f.shape[0] != K + 1:
        raise ValueError(f"force has {f.shape[0]} time samples, expected {K + 1}")
    f = f[..., sl]
    stationary_f = f.ndim == 1

    solver = _StepSolver(q, grid, dt, theta)
    u = np.empty((K + 1, q.size))
    u[0] = g[sl]
    for k in range(K):
        if stationary_f:
            fk = f
        elif theta == 1.0:
            fk = f[k + 1]
        else:
            fk = theta * f[k + 1] + (1.0 - theta) * f[k]
        rhs = u[k] + dt * fk
        if theta != 1.0:
            rhs = rhs + (1.0 - theta) * dt * solver.apply_B(u[k])
        try:
            u[k + 1] = solver.solve(rhs)
        except SingularStepMatrix as exc:
            raise SingularStepMatrix(k + 1) from exc
        if not np.all(np.isfinite(u[k + 1])):
            raise SingularStepMatrix(k + 1, "(non-finite iterate)")
    return _to_grid(grid, u)


@dataclass(frozen=True)
class SemigroupEnvelope:
    """Stability constants ``||T_t|| <= M e^{w t}`` plus ``||q_0||_inf``."""

    M: float = 1.0
    w: float = 0.0
    q0_inf: float = 0.0

    def __post_init__(self):
        if self.M < 1.0:
            raise ValueError("M must be >= 1")
        if self.q0_inf < 0:
            raise ValueError("q0_inf must be nonnegative")

    @property
    def kappa(self) -> float:
        return self.w + self.M * self.q0_inf

    def M_t(self, t):
        return self.M * np.exp(self.kappa * np.asarray(t, dtype=float))

    def Mtilde(self, t):
        """``int_0^t M(s) ds = (M(t) - M)/kappa``; equals ``M t`` at ``kappa = 0``."""
        t = np.asarray(t, dtype=float)
        k = self.kappa
        if abs(k) <= KAPPA_EPS:
            return self.M * t
        return self.M * np.expm1(k * t) / k

    def int_sM(self, t: float) -> float:
        """Closed form of ``int_0^t s M(s) ds``."""
        z = self.kappa * t
        if abs(z) < 1.0:
            # t^2 sum_j z^j / (j! (j+2))
            total, term = 0.0, 1.0
            for j in range(40):
                total += term / (j + 2)
                term *= z / (j + 1)
            return self.M * t * t * total
        k = self.kappa
        return self.M * (t * math.exp(z) / k - math.expm1(z) / (k * k))


def envelope_M(env: SemigroupEnvelope, t: float) -> float:
    return float(env.M_t(t))


def envelope_Mtilde(env: SemigroupEnvelope, t: float) -> float:
    return float(env.Mtilde(t))


def simpson_integral(fn, t: float, panels: int = 10_000) -> float:
    s = np.linspace(0.0, t, panels + 1)
    return float(simpson(fn(s), x=s))


def _converged_integral(fn, t: float, panels: int, tol: float) -> float:
    coarse = simpson_integral(fn, t, panels)
    fine = simpson_integral(fn, t, 2 * panels)
    scale = max(abs(fine), 1e-300)
    if abs(fine - coarse) > tol * scale:
        raise QuadratureNotConverged(f"panel doubling changed the integral by {abs(fine - coarse) / scale:.3e}")
    return fine


@dataclass
class EnvelopeIntegralReport:
    t: float
    int_M: float
    Mtilde: float
    int_sM: float
    int_sM_closed: float
    rows: list  # one dict per n
    passed: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("t", "int_M", "Mtilde", "int_sM", "int_sM_closed", "rows", "passed")}


def verify_lemma2(env: SemigroupEnvelope, t: float, n_max: int = 5, panels: int = 10_000,
                  tol: float = 1e-6, identity_rtol: float = 1e-8) -> EnvelopeIntegralReport:
    """Quadrature check of the four integral estimates and the identity
    ``int_0^t M Mtilde^n ds = Mtilde(t)^{n+1} / (n+1)``.
    """
    if t <= 0 or n_max < 1:
        raise ValueError("need t > 0 and n_max >= 1")
    Mt = env.Mtilde(t)
    int_M = _converged_integral(env.M_t, t, panels, tol)
    int_sM = _converged_integral(lambda s: s * env.M_t(s), t, panels, tol)
    sM_closed = env.int_sM(t)
    ok = abs(int_M - Mt) <= tol * Mt and abs(int_sM - sM_closed) <= tol * sM_closed
    ok = ok and int_sM <= t * Mt * (1 + tol)
    rows = []
    for n in range(1, n_max + 1):
        a = _converged_integral(lambda s: env.M_t(s) * env.Mtilde(s) ** n, t, panels, tol)
        b = _converged_integral(lambda s: s * env.M_t(s) * env.Mtilde(s) ** n, t, panels, tol)
        bound = float(Mt) ** (n + 1)
        exact = bound / (n + 1)
        row = {
            "n": n,
            "int_M_Mtn": a,
            "int_sM_Mtn": b,
            "ratio_b1": a / bound,
            "ratio_b2": b / (t * bound),
            "identity_rel_err": abs(a - exact) / exact,
        }
        row["passed"] = row["ratio_b1"] <= 1 + tol and row["ratio_b2"] <= 1 + tol and row["identity_rel_err"] <= identity_rtol
        ok = ok and row["passed"]
        rows.append(row)
    return EnvelopeIntegralReport(t, int_M, float(Mt), int_sM, sM_closed, rows, bool(ok))


def trapezoid_cumulative(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid integral with a leading zero."""
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
    return out


@dataclass
class StabilityReport:
    max_ratio: float
    ratios: np.ndarray
    nonnegative: Optional[bool]

    def passed(self, tol: float = 1e-8) -> bool:
        return self.max_ratio <= 1.0 + tol


def verify_theorem1_bound(op: OperatorSpec, env: SemigroupEnvelope, q, f, g,
                          u: Optional[np.ndarray] = None) -> StabilityReport:
    """Ratio ``||u(t)|| / (M(t) (||g|| + int_0^t ||f||))`` at every time step.

    A vanishing right-hand side counts as ratio 0 when ``u`` also vanishes.
    ``nonnegative`` is only evaluated when ``q, f, g >= 0``.
    """
    grid = op.grid
    if u is None:
        u = solve_deterministic(op, q, f, g)
    K = op.steps
    f_arr = np.zeros(grid.J + 1) if f is None else np.asarray(f, dtype=float)
    f_norm = grid.l2_norm(f_arr)
    f_norm = np.full(K + 1, float(f_norm)) if np.ndim(f_norm) == 0 else f_norm
    rhs = env.M_t(op.times) * (float(grid.l2_norm(g)) + trapezoid_cumulative(f_norm, op.dt))
    lhs = grid.l2_norm(u)
    ratios = np.zeros(K + 1)
    nz = rhs > 0
    ratios[nz] = lhs[nz] / rhs[nz]
    ratios[~nz & (lhs > 0)] = np.inf
    nonneg = None
    if np.all(np.asarray(q) >= 0) and np.all(f_arr >= 0) and np.all(np.asarray(g) >= 0):
        nonneg = bool(np.all(u >= -1e-12))
    return StabilityReport(float(ratios.max()), ratios, nonneg)
