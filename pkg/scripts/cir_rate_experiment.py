#!/usr/bin/env python3
"""Convergence-rate experiment for the synchronously coupled sqrt-process.

The mean coupled gap from (2, 1) is exactly e^-t, so the empirical W1 upper
bound doubles as a discretization/Monte-Carlo error probe: the script prints
the estimate, standard error and deviation at each checkpoint and the fitted
exponential rate (target: 1).

Usage:
    python3 scripts/cir_rate_experiment.py [--paths N] [--seed S] [--csv PATH]
"""

import argparse
import math
import sys

from nlbranch.config import load_scenario
from nlbranch.estimate import fit_rate, w1_upper
from nlbranch.simulate import simulate_coupled


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--csv", default=None, help="optional output CSV path")
    args = ap.parse_args(argv)

    sc = load_scenario("cir-rate").with_overrides(seed=args.seed,
                                                 n_paths=args.paths)
    ens = simulate_coupled(sc.coeffs, sc.nu, sc.x0, sc.y0, sc.sim)

    rows = []
    print(f"{'t':>5} {'w1_est':>12} {'se':>10} {'exact':>12} {'dev/se':>8}")
    for t in (t for t in ens.times if t > 0):
        est, se = w1_upper(ens, t)
        exact = math.exp(-t)
        z = abs(est - exact) / se if se > 0 else float("inf")
        rows.append((t, est, se, exact, z))
        print(f"{t:5.2f} {est:12.6f} {se:10.2e} {exact:12.6f} {z:8.2f}")

    fit = fit_rate([r[0] for r in rows], [r[1] for r in rows])
    print(f"\nfitted rate = {fit.lam:.5f} (se {fit.lam_se:.2e}), "
          f"prefactor = {fit.C:.5f}")

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("t,w1_est,w1_se,exact,dev_over_se\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
        print(f"wrote {args.csv}")
    return 0 if abs(fit.lam - 1.0) < 0.1 else 1


if __name__ == "__main__":
    sys.exit(run())
