"""Recompute the bounds summary from the bundled fixtures, then check it by simulation.

The fixture part is pure arithmetic. With ``--sessions K`` it also runs K
full-size attacked sessions with the fitted detector pair and reports how
many of them breach.
"""

import argparse
from dataclasses import replace

from timeshift.attack import ShiftStrategy, balance_pa
from timeshift.bounds import analyze
from timeshift.harness import DEFAULT_SEED, DetectorSpec, load_reference_fixtures, reproduce_paper
from timeshift.protocol import SessionConfig, run_session


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sessions", type=int, default=0, help="simulated attacked sessions to run")
    ap.add_argument("--pulses", type=int, default=SessionConfig.n_pulses)
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    args = ap.parse_args()

    fx = load_reference_fixtures()
    rep = reproduce_paper(fx)
    print(rep.text())
    if args.sessions <= 0:
        return

    cfg = replace(SessionConfig(), n_pulses=args.pulses)
    pair = DetectorSpec().build(cfg)
    p_a = balance_pa(fx.summaries["A"], fx.summaries["B"])
    print(f"\n{'seed':>10} {'E':>7} {'K_U':>7} {'K_L':>7} breach")
    hits = 0
    for i in range(args.sessions):
        res = run_session(replace(cfg, seed=args.seed + i), pair, ShiftStrategy(-250.0, 500.0, p_a))
        an = analyze(res.table, p_a, res.summaries)
        r = an.report
        hits += r.breach
        print(f"{args.seed + i:>10} {an.merged.qber:>7.4f} {r.k_upper:>7.0f} {r.k_lower:>7.0f} {r.breach}")
    print(f"breach in {hits}/{args.sessions} sessions")


if __name__ == "__main__":
    main()
