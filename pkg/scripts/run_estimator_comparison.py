#!/usr/bin/env python3
"""Desk-scale estimator comparison on simulated heteroskedastic SEM data.

Pools the alpha grid {0,1} x {-1,0} x {0,1} against the lambda grid
+-{0, 0.25, 0.5, 0.75} for each requested grid size, fits every
estimator on every replicate, and prints a moment table per size plus
the variance ratio of the proposed estimator against the homoscedastic
SEM.  Writes summary.csv and estimates.csv per size under --out-dir.

The full-scale version of this experiment is configs/full_sweep.json,
runnable as `hetsem simulate --config configs/full_sweep.json`.
"""

import argparse
import sys
from itertools import product
from pathlib import Path

import numpy as np
import pandas as pd

from hetsem.montecarlo import ESTIMATORS, SimConfig, run_pooled

ALPHA_GRID = tuple(product((0.0, 1.0), (-1.0, 0.0), (0.0, 1.0)))
LAMBDA_GRID = (-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75)
BETA_TRUE = (1.0, -1.0, 0.5)


def parse_sizes(text):
    sizes = []
    for token in text.split(","):
        rows, _, cols = token.strip().lower().partition("x")
        sizes.append((int(rows), int(cols)))
    return sizes


def build_cells(rows, cols, seed):
    return [SimConfig(grid_rows=rows, grid_cols=cols, lambda_true=lam,
                      beta_true=BETA_TRUE, alpha_true=alpha,
                      replications=1, seed=seed)
            for lam, alpha in product(LAMBDA_GRID, ALPHA_GRID)]


def variance_ratios(estimates):
    rows = []
    for j in range(3):
        name = f"beta_{j}"
        part = estimates[(estimates["parameter"] == name)
                         & estimates["converged"]
                         & np.isfinite(estimates["value"])]
        by_kind = part.groupby("estimator")["value"].var(ddof=1)
        if "proposed" in by_kind and "ho-sem" in by_kind:
            rows.append({"parameter": name,
                         "var_ratio_proposed_vs_hosem":
                             by_kind["proposed"] / by_kind["ho-sem"]})
    return pd.DataFrame(rows)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="7x7,12x12",
                        help="comma-separated ROWSxCOLS grid sizes")
    parser.add_argument("--reps-per-cell", type=int, default=5,
                        help="replications per (lambda, alpha) cell")
    parser.add_argument("--estimators", default=",".join(ESTIMATORS))
    parser.add_argument("--seed", type=int, default=20260814)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args(argv)

    estimators = tuple(e.strip() for e in args.estimators.split(","))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for rows, cols in parse_sizes(args.sizes):
        n = rows * cols
        cells = build_cells(rows, cols, args.seed)
        total = args.reps_per_cell * len(cells)
        print(f"\n=== n = {n} ({rows}x{cols}), {total} replications pooled "
              f"over {len(cells)} design cells ===")
        out = run_pooled(cells, total, args.seed, estimators,
                         workers=args.workers)
        betas = out.summary[out.summary["parameter"].str.startswith("beta")]
        print(betas.pivot_table(index=["estimator"], columns="parameter",
                                values=["mean", "sd"], sort=False)
              .round(4).to_string())
        ratios = variance_ratios(out.estimates)
        if not ratios.empty:
            print("\nVar(proposed) / Var(ho-sem):")
            print(ratios.round(3).to_string(index=False))
        print("\nconvergence:")
        print(out.convergence.round(3).to_string(index=False))
        out.summary.to_csv(out_dir / f"summary_n{n}.csv", index=False)
        out.estimates.to_csv(out_dir / f"estimates_n{n}.csv", index=False)
    print(f"\nwrote per-size CSVs to {out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
