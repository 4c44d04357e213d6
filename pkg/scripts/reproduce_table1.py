"""GMRES iteration counts on the unit cube (Table 1 layout).

    python scripts/reproduce_table1.py --k-max 2 --csv table1.csv
    python scripts/reproduce_table1.py --k-max 2 --eps 1e-2   # truncated H-LU
"""
import argparse
import logging

from hmaxwell.cli import RunConfig, TABLE1_KAPPAS, reproduce_table1, table1_grid, write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k-max", type=int, default=2)
    p.add_argument("--n-min", type=int, default=32)
    p.add_argument("--eps", type=float, default=None, help="relative truncation of the H-LU factors")
    p.add_argument("--rank", type=int, default=None, help="fixed-rank truncation of the H-LU factors")
    p.add_argument("--large", action="store_true")
    p.add_argument("--csv")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    base = RunConfig(n_min=a.n_min, eps=a.eps, rank=a.rank, large=a.large)
    cells = reproduce_table1(a.k_max, TABLE1_KAPPAS, base)
    print(table1_grid(cells))
    if a.csv:
        write_csv(a.csv, cells)


if __name__ == "__main__":
    main()
