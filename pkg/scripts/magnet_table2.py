"""Richardson iteration with H-LU on the box-with-inclusion problem
(kappa 10, beta 10 in the inclusion, J_S = (10,10,10) there), Table 2
layout: N_dof, error, time, iterations for several truncation levels.

    python scripts/magnet_table2.py --levels 3 --eps 1e-2 1e-4 1e-6
"""
import argparse
from dataclasses import asdict

from hmaxwell.cli import RunConfig, run, write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--levels", type=int, nargs="+", default=[3])
    p.add_argument("--eps", type=float, nargs="+", default=[1e-4])
    p.add_argument("--n-min", type=int, default=32)
    p.add_argument("--large", action="store_true")
    p.add_argument("--csv")
    a = p.parse_args()
    rows = []
    print(f"{'N_dof':>7} {'eps':>8} {'error':>10} {'factor[s]':>9} {'solve[s]':>9} {'iters':>5} {'mem/dense':>9}")
    for level in a.levels:
        for eps in a.eps:
            cfg = RunConfig(geometry="magnet", level=level, kappa=10.0, method="richardson", tol=1e-8,
                            eps=eps, n_min=a.n_min, max_it=200, large=a.large)
            row = run(cfg, write_outputs=False)
            rows.append(row)
            ratio = row.memory_bytes / (16 * row.N_dof ** 2)
            print(f"{row.N_dof:7d} {eps:8.0e} {row.error_2norm:10.2e} {row.time_factor:9.2f} "
                  f"{row.time_solve:9.2f} {row.iterations:5d} {ratio:9.3f}"
                  + ("" if row.converged else "  (not converged)"))
    if a.csv:
        write_csv(a.csv, rows)


if __name__ == "__main__":
    main()
