"""Solve every shipped scenario and run all verification checks.

Usage: python3 scripts/run_reference.py [--out out/reference]
"""
import argparse
from pathlib import Path

from wickchaos.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(out: Path) -> int:
    worst = 0
    for path in sorted((ROOT / "scenarios").glob("*.json")):
        dest = out / path.stem
        print(f"== {path.stem}")
        worst = max(worst, main(["solve", str(path), "--out", str(dest)]))
        worst = max(worst, main(["verify", str(path), "--check", "all", "--out", str(dest)]))
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/reference")
    raise SystemExit(run(Path(ap.parse_args().out)))
