"""Command line entry point.

Exit codes: 0 success / all checks pass, 1 a checked bound is violated,
2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .chaos import kondratiev_norm_sq
from .hermite_mc import RngConfig, orthogonality_table
from .multiindex import Shape, TruncationSpec, enumerate_indices, verify_lemma1a, zeta_box_product, zeta_sum
from .pde import QuadratureNotConverged, SingularStepMatrix, verify_lemma2, verify_theorem1_bound
from .propagator import (
    BlockTooLarge,
    LevelSolveError,
    dropped_couplings,
    effective_force,
    fmt,
    max_relative_deviation,
    norms_csv,
    report_json,
    solve_block_oracle,
    solve_chaos_system,
    summability_report,
    verify_eq3_bounds,
)
from .scenario import ScenarioError, load_scenario

log = logging.getLogger("wickchaos")

CHECKS = ("lemma1", "lemma2", "thm1", "eq3", "summability", "oracle", "mc")

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _out_dir(args, scenario) -> Path:
    out = args.out or scenario.output or os.path.join("out", scenario.name)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(path: str, scenario, timings: dict, extra: dict | None = None) -> dict:
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    doc = {
        "scenario": str(path),
        "name": scenario.name,
        "sha256": digest,
        "seed": scenario.seed,
        "versions": {"wickchaos": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "timings_s": timings,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    doc.update(extra or {})
    return doc


def cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario, args.seed)
    out = _out_dir(args, scenario)
    t0 = time.perf_counter()
    U = solve_chaos_system(scenario.data, threads=args.threads)
    elapsed = time.perf_counter() - t0
    (out / "U.json").write_text(U.to_json())
    (out / "norms.csv").write_text(norms_csv(U))
    manifest = _manifest(args.scenario, scenario, {"solve": elapsed},
                         {"warnings": scenario.data.warnings, "dropped_couplings": dropped_couplings(scenario.data)})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"solved {len(U.coefficients)} coefficients in {elapsed:.3f}s -> {out}")
    return EXIT_OK


def _check_decompositions(scenario, args, out):
    spec = TruncationSpec.from_dict(scenario.checks.get("decomposition", {"m": 3, "n": 6}))
    rep = verify_lemma1a(spec)
    rows = [{"check": "N(a,k) <= 2^(k|a|)", "value": rep.worst_ratio, "limit": 1.0, "passed": rep.passed,
             "witness": str(rep.worst[0]) + f", k={rep.worst[1]}" if rep.worst else ""}]
    doc = {"truncation": spec.to_dict(), "checked": rep.checked, "worst_ratio": rep.worst_ratio,
           "violations": [[str(a), k, c, b] for a, k, c, b in rep.violations]}
    return rows, doc


def _check_envelope(scenario, args, out):
    sc = scenario.data
    n_max = int(scenario.checks.get("envelope_n_max", 5))
    rep = verify_lemma2(sc.env, sc.op.T, n_max)
    rows = [{"check": "int_0^t M = Mtilde", "value": rep.int_M / rep.Mtilde, "limit": 1.0,
             "passed": abs(rep.int_M - rep.Mtilde) <= 1e-6 * rep.Mtilde}]
    rows.append({"check": "int_0^t s M <= t Mtilde", "value": rep.int_sM / (rep.t * rep.Mtilde),
                 "limit": 1.0, "passed": rep.int_sM <= rep.t * rep.Mtilde * (1 + 1e-6)})
    for r in rep.rows:
        rows.append({"check": f"n={r['n']} int M Mt^n <= Mt^(n+1)", "value": r["ratio_b1"],
                     "limit": 1.0, "passed": r["ratio_b1"] <= 1 + 1e-6})
        rows.append({"check": f"n={r['n']} int s M Mt^n <= t Mt^(n+1)", "value": r["ratio_b2"],
                     "limit": 1.0, "passed": r["ratio_b2"] <= 1 + 1e-6})
        rows.append({"check": f"n={r['n']} int M Mt^n = Mt^(n+1)/(n+1) rel err", "value": r["identity_rel_err"],
                     "limit": 1e-8, "passed": r["identity_rel_err"] <= 1e-8})
    return rows, rep.to_dict()


def _check_stability(scenario, args, out):
    sc = scenario.data
    U = solve_chaos_system(sc, threads=args.threads)
    rows, doc = [], {}
    for gamma in sc.indices:
        ftilde = effective_force(sc, gamma, U.coefficients)
        rep = verify_theorem1_bound(sc.op, sc.env, sc.q0, ftilde, sc.G.coefficient(gamma), U.coefficients[gamma])
        rows.append({"check": f"stability bound, level solve {gamma}", "value": rep.max_ratio, "limit": 1.0,
                     "passed": rep.passed(1e-8)})
        doc[str(gamma)] = {"max_ratio": rep.max_ratio, "nonnegative": rep.nonnegative}
    return rows, doc


def _bound_times(scenario):
    T = scenario.data.op.T
    times = scenario.checks.get("bound_times", [T / 4, T / 2, T])
    dt = scenario.data.op.dt
    return [round(t / dt) * dt for t in times]


def _check_coefficient_bound(scenario, args, out):
    sc = scenario.data
    tol = float(scenario.checks.get("bound_tol", 1e-6))
    U = solve_chaos_system(sc, threads=args.threads)
    rows, doc = [], {}
    m = sc.Q.truncation.m
    for i, t in enumerate(_bound_times(scenario)):
        rep = verify_eq3_bounds(sc, U, t, tol=tol)
        (out / f"coefficient_bound_t{i}.csv").write_text(rep.to_csv(m))
        worst = max(rep.records, key=lambda r: -1 if r.ratio_exact is None else r.ratio_exact)
        rows.append({"check": f"coefficient bound ratio_exact at t={fmt(t)}", "value": rep.max_ratio_exact, "limit": 1 + tol,
                     "passed": rep.max_ratio_exact <= 1 + tol, "witness": str(worst.index)})
        rows.append({"check": f"rhs_exact <= rhs_coarse at t={fmt(t)}", "value": float(rep.ordering_holds),
                     "limit": 1.0, "passed": rep.ordering_holds})
        doc[fmt(t)] = rep.to_dict(m)
    return rows, doc


def _check_summability(scenario, args, out):
    sc = scenario.data
    U = solve_chaos_system(sc, threads=args.threads)
    p_list = scenario.checks.get("p_list", [1.0, 2.0, 4.0, 6.0, 8.0])
    rep = summability_report(sc, U, p_list)
    (out / "summability.csv").write_text(rep.to_csv())
    rows = []
    for r in rep.rows:
        direct = kondratiev_norm_sq(sc.G, r.p).partial_sum + sc.op.T ** 2 * kondratiev_norm_sq(sc.F, r.p).partial_sum
        err = abs(r.data_sum - direct) / max(abs(direct), 1e-300)
        rows.append({"check": f"S1+T^2 S2 vs kondratiev_norm_sq p={fmt(r.p)}", "value": err, "limit": 1e-12,
                     "passed": err <= 1e-12})
    thr = rep.row_at(rep.threshold)
    rows.append({"check": f"level decay >= 2 at threshold p={fmt(rep.threshold)}", "value": thr.min_decay,
                 "limit": 2.0, "passed": thr.decays, "lower": True})
    return rows, rep.to_dict()


def _check_oracle(scenario, args, out):
    sc = scenario.data
    U = solve_chaos_system(sc, threads=args.threads)
    V = solve_block_oracle(sc)
    dev = max_relative_deviation(U, V)
    return [{"check": "recursion vs block oracle", "value": dev, "limit": 1e-10, "passed": dev <= 1e-10}], \
        {"max_relative_deviation": dev}


def _check_mc(scenario, args, out):
    n = int(scenario.checks.get("mc_samples", 1_000_000))
    idx = enumerate_indices(TruncationSpec(2, 3))
    gram, se = orthogonality_table(idx, n, RngConfig(scenario.seed), m=2)
    worst, witness = 0.0, ""
    passed = True
    for i, a in enumerate(idx):
        for j, b in enumerate(idx):
            target = a.factorial() if i == j else 0.0
            z = abs(gram[i, j] - target) / se[i, j] if se[i, j] > 0 else (0.0 if gram[i, j] == target else math.inf)
            if z > worst:
                worst, witness = z, f"{a},{b}"
            passed = passed and z <= 4.0
    return [{"check": f"hermite orthogonality (N={n})", "value": worst, "limit": 4.0, "passed": passed,
             "witness": witness}], {"max_z": worst, "gram": gram, "stderr": se}


RUNNERS = {"lemma1": _check_decompositions, "lemma2": _check_envelope, "thm1": _check_stability,
           "eq3": _check_coefficient_bound, "summability": _check_summability, "oracle": _check_oracle,
           "mc": _check_mc}


def _table(rows) -> str:
    lines = []
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        op = ">=" if r.get("lower") else "<="
        wit = f"  [{r['witness']}]" if r.get("witness") and not r["passed"] else ""
        lines.append(f"{status}  {r['check']}: {fmt(r['value'])} {op} {fmt(r['limit'])}{wit}")
    return "\n".join(lines)


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario, args.seed)
    out = _out_dir(args, scenario)
    names = CHECKS if args.check == "all" else [args.check]
    all_rows, docs, timings = [], {}, {}
    for name in names:
        t0 = time.perf_counter()
        rows, doc = RUNNERS[name](scenario, args, out)
        timings[name] = time.perf_counter() - t0
        all_rows.extend(rows)
        docs[name] = {"rows": rows, "details": doc}
    passed = all(r["passed"] for r in all_rows)
    (out / f"verify_{args.check}.json").write_text(report_json({"passed": passed, "checks": docs}))
    (out / f"manifest_verify_{args.check}.json").write_text(
        json.dumps(_manifest(args.scenario, scenario, timings), indent=2))
    print(_table(all_rows))
    return EXIT_OK if passed else EXIT_VIOLATION


def series_rows(p_values, m: int, n: int, shape: Shape) -> list[list]:
    """Partial sums of ``(2N)^{-p alpha}`` sweeping ``m = 1..m`` at fixed ``n``."""
    rows = []
    for p in p_values:
        for mm in range(1, m + 1):
            spec = TruncationSpec(mm, n, shape)
            partial = zeta_sum(p, spec)
            closed = zeta_box_product(p, mm, n) if shape is Shape.BOX else None
            rows.append([p, mm, n, shape.value, partial, closed])
    return rows


def series_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "m", "n", "shape", "partial_sum", "closed_form"])
    for p, mm, n, shape, partial, closed in rows:
        w.writerow([fmt(p), mm, n, shape, fmt(partial), fmt(closed)])
    return buf.getvalue()


def cmd_series(args) -> int:
    p_values = [float(x) for x in args.p.split(",")]
    rows = series_rows(p_values, args.m, args.n, Shape(args.shape))
    text = series_csv(rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "series.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wickchaos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="solve the chaos system of a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("verify", parents=[common], help="run a verification check on a scenario")
    p.add_argument("scenario")
    p.add_argument("--check", choices=CHECKS + ("all",), default="all")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("series", parents=[common], help="partial sums of (2N)^{-p alpha}")
    p.add_argument("--p", required=True, help="comma separated exponents")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--shape", choices=("box", "total"), default="box")
    p.set_defaults(func=cmd_series)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BlockTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SingularStepMatrix, LevelSolveError, QuadratureNotConverged, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
