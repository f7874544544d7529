"""Partial sums of the (2N)^{-p alpha} series as the number of coordinates grows.

Writes a plot-ready CSV with one row per (p, m). At p <= 1 the sums keep
growing with m; above 1 they settle onto the product formula.
"""
import argparse
from pathlib import Path

from wickchaos.cli import series_csv, series_rows
from wickchaos.multiindex import Shape

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", default="0.5,1,1.5,2,3")
    ap.add_argument("--m", type=int, default=16)
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--out", default="out/series_scan.csv")
    args = ap.parse_args()
    rows = series_rows([float(x) for x in args.p.split(",")], args.m, args.n, Shape.BOX)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(series_csv(rows))
    for p, m, n, _, partial, _ in rows:
        if m in (1, args.m // 2, args.m):
            print(f"p={p:<4g} m={m:<3d} partial sum {partial:.6g}")
