"""How often a calibration run lands at the maximal activation-offset deviation.

Repeats the 2844-run experiment ``--repeats`` times with different seeds and
reports how often the 3-sigma interval of the simulated count covers 106.
"""

import argparse
import math

import numpy as np

from timeshift.harness import DEFAULT_SEED, calibration_stats, load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=2844)
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--target", type=int, default=106)
    args = ap.parse_args()

    model = load_scenario().calibration
    counts, covered = [], 0
    for i in range(args.repeats):
        st = calibration_stats(model, args.runs, np.random.default_rng([DEFAULT_SEED, i]))
        counts.append(st.n_maximal)
        sd = math.sqrt(args.runs * st.frequency * (1 - st.frequency))
        covered += abs(st.n_maximal - args.target) <= 3 * sd
    counts = np.array(counts)
    print(f"maximal deviations per {args.runs} runs: mean {counts.mean():.1f}, sd {counts.std(ddof=1):.1f}, "
          f"range {counts.min()}..{counts.max()}")
    print(f"3-sigma interval covers {args.target} in {covered}/{args.repeats} repeats")


if __name__ == "__main__":
    main()
