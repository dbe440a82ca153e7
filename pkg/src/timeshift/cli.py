"""Command-line entry point: ``timeshift <subcommand> [--config PATH] [--seed N] [--out DIR] [--pulses N]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .attack import balance_pa
from .bounds import analyze
from .errors import ConfigError, TimeShiftError
from .protocol import read_count_csv, read_sifted_csv


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="scenario file (default: bundled reference scenario)")
    p.add_argument("--seed", type=int, help="override the scenario seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--pulses", type=int, help="override the number of pulses per session")
    p.add_argument("--workers", type=int, help="threads for block/sweep parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeshift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("sweep", help="constant-shift sessions over the sweep shifts"))
    _common(sub.add_parser("attack", help="run Eve's attack and evaluate the key-length bounds"))

    b = sub.add_parser("bounds", help="key-length bounds from per-shift CSV tables")
    _common(b)
    b.add_argument("--table", type=Path, help="sifted-table CSV (default: bundled sifted-cell fixture)")
    b.add_argument("--counts", type=Path, help="count-summary CSV (default: bundled shift-count fixture)")
    b.add_argument("--p-a", type=float, help="weight of shift A (default: balanced from counts)")

    r = sub.add_parser("reproduce-paper", help="recompute the bounds summary from the bundled fixtures")
    _common(r)
    r.add_argument("--data-dir", type=Path, help="directory holding shift_counts.csv and sifted_cells.csv")

    c = sub.add_parser("calibrate-stats", help="frequency of maximal activation-offset deviations")
    _common(c)
    c.add_argument("--runs", type=int, default=2844)
    return parser


def _scenario(args) -> harness.Scenario:
    return harness.load_scenario(args.config, seed=args.seed, out=args.out, pulses=args.pulses,
                                 workers=args.workers)


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    rows = harness.run_sweep(sc)
    harness.write_outputs(sc.output_dir, {"sweep.csv": harness.sweep_csv(rows)})
    print(f"{'shift_ps':>9} {'d0':>8} {'d1':>8} {'qber':>8} {'mismatch':>9}")
    for r in rows:
        print(f"{r.shift:>9.0f} {r.d0:>8d} {r.d1:>8d} {r.qber:>8.4f} {r.mismatch:>9.3f}")
    return 0


def cmd_attack(args) -> int:
    sc = _scenario(args)
    outcome = harness.run_attack(sc)
    harness.write_outputs(sc.output_dir, harness.attack_files(outcome))
    s = outcome.strategy
    print(f"strategy: A={s.shift_a:g} ps, B={s.shift_b:g} ps, p_A={s.p_a:.4f}")
    print(outcome.analysis.table())
    return 0


def cmd_bounds(args) -> int:
    sc = _scenario(args)
    fx = harness.load_reference_fixtures() if args.table is None or args.counts is None else None
    table = read_sifted_csv(args.table) if args.table else fx.table
    counts = read_count_csv(args.counts) if args.counts else list(fx.summaries.values())
    by_shift = {c.shift: c for c in counts}
    summaries = {k: by_shift[s] for k, s in table.shifts.items() if s in by_shift}
    p_a = args.p_a if args.p_a is not None else balance_pa(summaries["A"], summaries["B"])
    an = analyze(table, p_a, summaries or None, sc.session.mean_photon_number, sc.y0, sc.ec_inefficiency)
    harness.write_outputs(sc.output_dir, {"bounds.csv": an.report.to_csv(), "report.txt": an.table() + "\n"})
    print(an.table())
    return 0


def cmd_reproduce(args) -> int:
    sc = _scenario(args)
    fixtures = harness.load_reference_fixtures(args.data_dir)
    rep = harness.reproduce_paper(fixtures)
    text = rep.text()
    harness.write_outputs(sc.output_dir, {"bounds_table.txt": text + "\n", "bounds.csv": rep.analysis.report.to_csv()})
    print(text)
    return 0 if rep.passed else 1


def cmd_calibrate(args) -> int:
    sc = _scenario(args)
    rng = np.random.default_rng(sc.session.seed)
    st = harness.calibration_stats(sc.calibration, args.runs, rng)
    harness.write_outputs(sc.output_dir, {"calibration.csv": st.to_csv()})
    print(f"maximal deviations: {st.n_maximal}/{st.n_runs} = {st.frequency:.4f} "
          f"({100 * st.confidence:.2f}% CI {st.ci_low:.4f}..{st.ci_high:.4f})")
    return 0


COMMANDS = {
    "sweep": cmd_sweep,
    "attack": cmd_attack,
    "bounds": cmd_bounds,
    "reproduce-paper": cmd_reproduce,
    "calibrate-stats": cmd_calibrate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (TimeShiftError, ValueError, OSError, KeyError) as exc:
        code = 2 if isinstance(exc, ConfigError) else 1
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
