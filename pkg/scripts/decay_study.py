"""Approximate-inverse error and memory versus the block rank (Figure 2
layout): one CSV with columns r, error, memory_ratio.

    python scripts/decay_study.py --level 1 --n-min 4
    python scripts/decay_study.py --level 2 --n-min 8 --ranks 1 2 3 4 6 8 --csv decay604.csv
"""
import argparse

from hmaxwell.cli import RunConfig, decay_study, write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--n-min", type=int, default=4)
    p.add_argument("--kappa", type=float, default=25.0)
    p.add_argument("--ranks", type=int, nargs="+", default=[2, 4, 8, 16, 32])
    p.add_argument("--mode", choices=("recompress", "schulz"), default="recompress")
    p.add_argument("--csv")
    a = p.parse_args()
    rows = decay_study(RunConfig(level=a.level, n_min=a.n_min, kappa=a.kappa), a.ranks, a.mode)
    print(f"{'r':>5} {'error':>12} {'memory':>8}")
    for r in rows:
        print(f"{r['r']!s:>5} {r['error']:12.3e} {r['memory_ratio']:8.4f}")
    if a.csv:
        write_csv(a.csv, rows)


if __name__ == "__main__":
    main()
