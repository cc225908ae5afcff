#!/usr/bin/env python3
"""Run the condition checks and a coupled ensemble for every bundled scenario.

Writes one report set per scenario under --out (default ./out) and prints a
one-line verdict summary at the end.  Scenarios expected to fail their checks
(the negative controls) are reported as such, not as errors.

Usage:
    python3 scripts/run_all_scenarios.py [--out DIR] [--paths N] [--quick]
"""

import argparse
import sys

from nlbranch.cli import main as cli_main
from nlbranch.config import PRESETS, load_scenario


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out")
    ap.add_argument("--paths", type=int, default=None,
                    help="override the per-scenario path count")
    ap.add_argument("--quick", action="store_true",
                    help="cap every ensemble at 500 paths")
    args = ap.parse_args(argv)

    results = {}
    for name in sorted(PRESETS):
        sc = load_scenario(name)
        base = ["--scenario", name, "--out", args.out]
        paths = args.paths if args.paths is not None else (
            500 if args.quick else None)
        couple_args = base + (["--paths", str(paths)] if paths else [])

        check_code = cli_main(["check"] + base)
        couple_code = cli_main(["couple"] + couple_args)
        expected_fail = sc.expect_drift_failure
        ok = (check_code == 1) if expected_fail else (check_code == 0)
        ok = ok and couple_code == 0
        results[name] = (check_code, couple_code, expected_fail, ok)

    print("\n=== summary ===")
    bad = 0
    for name, (cc, pc, expected_fail, ok) in results.items():
        tag = "ok" if ok else "UNEXPECTED"
        note = " (negative control)" if expected_fail else ""
        print(f"{name:20s} check={cc} couple={pc} {tag}{note}")
        bad += 0 if ok else 1
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(run())
