"""Space-time refinement of the heat mode sin(pi x) for both time schemes."""
import argparse
import csv
import math
import sys

import numpy as np

from wickchaos.chaos import Grid
from wickchaos.pde import OperatorSpec, solve_deterministic


def heat_error(J, dt, scheme, t=0.1):
    grid = Grid(J, "dirichlet")
    g = np.sin(np.pi * grid.x)
    g[-1] = 0.0
    u = solve_deterministic(OperatorSpec(grid, dt, t, scheme), np.zeros(J + 1), None, g)
    exact = math.exp(-math.pi ** 2 * t) * g
    return float(grid.l2_norm(u[-1] - exact) / grid.l2_norm(exact))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=5)
    args = ap.parse_args()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["scheme", "J", "dt", "rel_error", "order"])
    for scheme in ("crank_nicolson", "backward_euler"):
        prev = None
        for i in range(args.levels):
            J, dt = 20 * 2 ** i, 0.01 / 2 ** i
            err = heat_error(J, dt, scheme)
            w.writerow([scheme, J, repr(dt), repr(err), "" if prev is None else f"{math.log2(prev / err):.4f}"])
            prev = err
