import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_random
from wickchaos.chaos import Grid
from wickchaos.pde import (
    OperatorSpec,
    SemigroupEnvelope,
    SingularStepMatrix,
    envelope_M,
    envelope_Mtilde,
    simpson_integral,
    solve_deterministic,
    trapezoid_cumulative,
    verify_lemma2,
    verify_theorem1_bound,
)


def heat_error(J, dt, t=0.1, scheme="crank_nicolson"):
    grid = Grid(J, "dirichlet")
    op = OperatorSpec(grid, dt, t, scheme)
    g = np.sin(np.pi * grid.x)
    u = solve_deterministic(op, np.zeros(J + 1), None, g)
    exact = math.exp(-math.pi ** 2 * t) * g
    return float(grid.l2_norm(u[-1] - exact) / grid.l2_norm(exact))


# --- solver ----------------------------------------------------------------

def test_heat_mode_accuracy():
    assert heat_error(200, 1e-4) <= 1e-3


def test_convergence_order():
    errs = [heat_error(20 * 2 ** i, 0.01 / 2 ** i) for i in range(4)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.9


def test_backward_euler_first_order():
    errs = [heat_error(400, 0.01 / 2 ** i, scheme="backward_euler") for i in range(3)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(0.8 <= o <= 1.2 for o in orders)


def test_zero_data_zero_solution():
    grid = Grid(30, "dirichlet")
    op = OperatorSpec(grid, 0.01, 0.1)
    u = solve_deterministic(op, np.linspace(0, 1, 31), None, np.zeros(31))
    assert np.all(u == 0.0)


@pytest.mark.parametrize("scheme", ["crank_nicolson", "backward_euler"])
def test_periodic_constant_decays_exponentially(scheme):
    c, dt, T = 1.5, 0.01, 0.5
    grid = Grid(16, "periodic")
    op = OperatorSpec(grid, dt, T, scheme)
    u = solve_deterministic(op, np.full(17, c), None, np.ones(17))
    exact = np.exp(-c * op.times)
    tol = op.steps * (c * dt) ** 3 if scheme == "crank_nicolson" else op.steps * (c * dt) ** 2
    np.testing.assert_allclose(u[:, 5], exact, atol=tol)
    assert np.ptp(u[-1]) < 1e-13


def test_stationary_forcing_reaches_steady_state():
    # -u'' + u = 1 on periodic grid has the constant solution 1
    grid = Grid(20, "periodic")
    op = OperatorSpec(grid, 0.05, 20.0, "backward_euler")
    u = solve_deterministic(op, np.ones(21), np.ones(21), np.zeros(21))
    np.testing.assert_allclose(u[-1], 1.0, atol=1e-8)


@pytest.mark.parametrize("boundary", ["dirichlet", "periodic"])
def test_solver_linear(boundary):
    rng = np.random.default_rng(0)
    grid = Grid(40, boundary)
    op = OperatorSpec(grid, 0.01, 0.2)
    q = 1.0 + np.abs(smooth_random(rng, grid))
    f1, f2, g1, g2 = (smooth_random(rng, grid) for _ in range(4))
    a, b = 1.7, -0.4
    combo = solve_deterministic(op, q, a * f1 + b * f2, a * g1 + b * g2)
    sep = a * solve_deterministic(op, q, f1, g1) + b * solve_deterministic(op, q, f2, g2)
    assert np.max(np.abs(combo - sep)) <= 1e-12 * max(1.0, np.max(np.abs(sep)))


def test_trajectory_forcing_matches_stationary():
    rng = np.random.default_rng(1)
    grid = Grid(30, "dirichlet")
    op = OperatorSpec(grid, 0.01, 0.1)
    f = smooth_random(rng, grid)
    g = smooth_random(rng, grid)
    q = np.ones(31)
    a = solve_deterministic(op, q, f, g)
    b = solve_deterministic(op, q, np.tile(f, (op.steps + 1, 1)), g)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_operator_validation():
    with pytest.raises(ValueError):
        OperatorSpec(Grid(10), 0.03, 0.1)
    with pytest.raises(ValueError):
        OperatorSpec(Grid(10), 0.01, 0.1, "rk4")
    assert OperatorSpec(Grid(10), 0.01, 0.1).steps == 10


def test_singular_step_matrix():
    grid = Grid(4, "periodic")
    op = OperatorSpec(grid, 0.5, 1.0, "backward_euler")
    with pytest.raises(SingularStepMatrix):
        solve_deterministic(op, np.full(5, -2.0), None, np.ones(5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_backward_euler_contracts_without_potential(seed):
    rng = np.random.default_rng(seed)
    grid = Grid(int(rng.integers(8, 40)), "dirichlet")
    op = OperatorSpec(grid, 0.05, 0.5, "backward_euler")
    u = solve_deterministic(op, np.abs(smooth_random(rng, grid)), None, smooth_random(rng, grid))
    norms = grid.l2_norm(u)
    assert np.all(np.diff(norms) <= 1e-14)


# --- envelopes -------------------------------------------------------------

def test_envelope_examples():
    assert envelope_M(SemigroupEnvelope(1, 0, 0), 3.0) == 1.0
    assert math.isclose(envelope_M(SemigroupEnvelope(1, 0, 1), 1.0), math.e)
    assert math.isclose(envelope_Mtilde(SemigroupEnvelope(1, 0, 1), 1.0), math.e - 1)
    assert envelope_Mtilde(SemigroupEnvelope(2, 0, 0), 0.5) == 1.0
    with pytest.raises(ValueError):
        SemigroupEnvelope(0.5)


def test_mtilde_matches_quadrature_random():
    rng = np.random.default_rng(2)
    for _ in range(20):
        env = SemigroupEnvelope(rng.uniform(1, 3), rng.uniform(-2, 2), rng.uniform(0, 2))
        t = rng.uniform(0.1, 2.0)
        quad = simpson_integral(env.M_t, t)
        assert math.isclose(quad, env.Mtilde(t), rel_tol=1e-8)
        sq = simpson_integral(lambda s: s * env.M_t(s), t)
        assert math.isclose(sq, env.int_sM(t), rel_tol=1e-8)


def test_mtilde_continuous_at_zero_kappa():
    t = 0.7
    flat = SemigroupEnvelope(1.5, 0.0, 0.0)
    near = SemigroupEnvelope(1.5, 1e-10, 0.0)
    assert math.isclose(float(near.Mtilde(t)), float(flat.Mtilde(t)), rel_tol=1e-9)
    assert math.isclose(near.int_sM(t), flat.int_sM(t), rel_tol=1e-9)
    assert math.isclose(flat.int_sM(t), 1.5 * t * t / 2, rel_tol=1e-15)


def test_trapezoid_cumulative():
    np.testing.assert_allclose(trapezoid_cumulative(np.ones(5), 0.25), [0, 0.25, 0.5, 0.75, 1.0])


@pytest.mark.parametrize("env", [SemigroupEnvelope(1, 0, 0), SemigroupEnvelope(1, 0, 1.0),
                                 SemigroupEnvelope(2, -1.0, 0.3), SemigroupEnvelope(1.2, -2.0, 0.0)])
def test_envelope_integrals(env):
    rep = verify_lemma2(env, 0.8)
    assert rep.passed
    assert max(r["identity_rel_err"] for r in rep.rows) <= 1e-8
    assert all(r["ratio_b1"] <= 1 + 1e-6 and r["ratio_b2"] <= 1 + 1e-6 for r in rep.rows)


def test_envelope_identity_values():
    rep = verify_lemma2(SemigroupEnvelope(1, 0, 0), 1.0, n_max=3)
    assert [round(r["ratio_b1"], 12) for r in rep.rows] == [0.5, round(1 / 3, 12), 0.25]


# --- stability bound -------------------------------------------------------

def test_stability_bound_free_heat():
    rng = np.random.default_rng(3)
    grid = Grid(40, "dirichlet")
    op = OperatorSpec(grid, 0.005, 0.5)
    rep = verify_theorem1_bound(op, SemigroupEnvelope(), np.zeros(41), smooth_random(rng, grid),
                                smooth_random(rng, grid))
    assert rep.passed() and rep.ratios[0] == pytest.approx(1.0)


def test_stability_bound_zero_data():
    grid = Grid(20, "periodic")
    op = OperatorSpec(grid, 0.01, 0.1)
    rep = verify_theorem1_bound(op, SemigroupEnvelope(1, 0, 1), np.ones(21), None, np.zeros(21))
    assert rep.max_ratio == 0.0


@pytest.mark.parametrize("seed", range(50))
def test_stability_bound_random(seed):
    rng = np.random.default_rng(seed)
    boundary = "dirichlet" if seed % 2 == 0 else "periodic"
    grid = Grid(int(rng.integers(10, 60)), boundary)
    op = OperatorSpec(grid, 0.005, 0.25)
    q = 2.0 * smooth_random(rng, grid)
    if boundary == "periodic":
        q = np.abs(q)
    f = np.outer(np.cos(5 * op.times), smooth_random(rng, grid))
    g = smooth_random(rng, grid)
    env = SemigroupEnvelope(1.0, 0.0, float(np.max(np.abs(q))))
    assert verify_theorem1_bound(op, env, q, f, g).passed(1e-8)


def test_nonnegativity_reported_only_for_nonnegative_data():
    grid = Grid(30, "dirichlet")
    op = OperatorSpec(grid, 0.01, 0.2)
    g = np.sin(np.pi * grid.x)
    env = SemigroupEnvelope(1, 0, 1)
    assert verify_theorem1_bound(op, env, np.ones(31), np.abs(g), g).nonnegative is True
    assert verify_theorem1_bound(op, env, np.ones(31), None, -g).nonnegative is None
