"""Run every experiment battery through the CLI into one output tree."""
import argparse
import sys
from pathlib import Path

from recbf_kit.cli import EXPERIMENTS, main as cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-plots", action="store_true")
    args = ap.parse_args()
    worst = 0
    for name in EXPERIMENTS:
        argv = ["reproduce", name, "--seed", str(args.seed), "--out", str(Path(args.out) / name)]
        if args.no_plots:
            argv.append("--no-plots")
        code = cli(argv)
        print(f"[{name}] exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
