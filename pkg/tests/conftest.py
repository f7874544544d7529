from pathlib import Path

import numpy as np
import pytest

from wickchaos.chaos import ChaosField, Grid
from wickchaos.multiindex import ZERO, TruncationSpec, enumerate_indices
from wickchaos.pde import OperatorSpec
from wickchaos.propagator import make_scenario
from wickchaos.scenario import load_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def smooth_random(rng, grid: Grid, modes: int = 4, scale: float = 1.0) -> np.ndarray:
    x = grid.x
    v = np.zeros_like(x)
    for j in range(1, modes + 1):
        c = rng.standard_normal()
        if grid.boundary == "dirichlet":
            v += c * np.sin(j * np.pi * x) / j
        else:
            v += c * np.cos(2 * j * np.pi * x + rng.uniform(0, 2 * np.pi)) / j
    if grid.boundary == "periodic":
        v[-1] = v[0]
    else:
        v[0] = v[-1] = 0.0
    return scale * v


def random_scenario(seed, m=2, n=3, J=50, T=0.5, dt=0.005, boundary="dirichlet", scheme="crank_nicolson",
                    density=0.6, trajectory_force=True):
    """Random sparse Q, F, G; ``||q_gamma||_inf <= ||q_0||_inf`` by construction."""
    rng = np.random.default_rng(seed)
    grid = Grid(J, boundary)
    trunc = TruncationSpec(m, n)
    op = OperatorSpec(grid, dt, T, scheme)
    idx = enumerate_indices(trunc)
    q0 = 1.0 + 0.5 * np.abs(smooth_random(rng, grid))
    if boundary == "dirichlet":
        q0[0] = q0[-1] = 0.0
    q0_inf = np.max(np.abs(q0))
    Q, F, G = {ZERO: q0}, {}, {}
    for g in idx:
        if not g.is_zero() and rng.uniform() < density:
            v = smooth_random(rng, grid)
            Q[g] = v * (rng.uniform(0.2, 1.0) * q0_inf / max(np.max(np.abs(v)), 1e-12))
        if rng.uniform() < density or g.is_zero():
            G[g] = smooth_random(rng, grid, scale=0.5 ** g.length)
        if rng.uniform() < density:
            f = smooth_random(rng, grid, scale=0.5 ** g.length)
            if trajectory_force:
                f = np.outer(np.cos(3 * op.times + rng.uniform()), f)
            F[g] = f
    dtF = dt if trajectory_force else None
    return make_scenario(ChaosField(trunc, grid, Q), ChaosField(trunc, grid, F, dtF), ChaosField(trunc, grid, G), op)


@pytest.fixture(scope="session")
def reference():
    return load_scenario(SCENARIOS / "reference.json")


@pytest.fixture(scope="session")
def scenario_path():
    return lambda name: SCENARIOS / f"{name}.json"


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
