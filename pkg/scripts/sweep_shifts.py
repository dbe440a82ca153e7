"""Detector counts, QBER and mismatch ratio against the time shift.

Writes a CSV for plotting; one constant-shift session per point.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from timeshift.harness import Scenario, load_scenario, run_sweep, sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lo", type=float, default=-600.0)
    ap.add_argument("--hi", type=float, default=800.0)
    ap.add_argument("--step", type=float, default=50.0)
    ap.add_argument("--pulses", type=int, default=2_000_000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("out/sweep.csv"))
    args = ap.parse_args()

    base = load_scenario(pulses=args.pulses, workers=args.workers)
    shifts = tuple(float(s) for s in np.arange(args.lo, args.hi + 0.5 * args.step, args.step))
    sc: Scenario = replace(base, sweep=shifts, sweep_step=args.step)
    rows = run_sweep(sc)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(sweep_csv(rows))
    for r in rows:
        print(f"{r.shift:>7.0f} ps  d0={r.d0:>6d} d1={r.d1:>6d}  qber={r.qber:.4f}  mismatch={r.mismatch:.2f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
