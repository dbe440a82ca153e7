"""Scenario loading and orchestration: calibrate, sweep, attack, bounds, report."""

from __future__ import annotations

import configparser
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .attack import ShiftStrategy, balance_pa, optimize_shift_pair, probe_mismatch
from .bounds import DEFAULT_EC_INEFFICIENCY, DEFAULT_Y0, Analysis, analyze
from .detector import (
    CalibrationModel,
    DetectorPair,
    GateProfile,
    expected_bit_rates,
    fit_pair_to_rates,
    is_maximal,
    ratio_of_rates,
    read_curve_csv,
    sample_calibration,
)
from .errors import ConfigError, FixtureMissingError
from .protocol import (
    CountSummary,
    SessionConfig,
    SessionProbe,
    SessionResult,
    expected_session,
    qber,
    read_count_csv,
    read_sifted_csv,
    run_session,
    sifted_csv,
    count_csv,
)

DEFAULT_SEED = 20080915
DATA = resources.files("timeshift") / "data"


def dark_prob_from_yield(y0: float) -> float:
    """Per-detector dark-count probability giving vacuum yield ``y0`` for the pair."""
    return -math.expm1(0.5 * math.log1p(-y0))


@dataclass(frozen=True)
class DetectorSpec:
    """How to build the detector pair.

    ``model`` is ``fit`` (profiles fitted to a per-shift counts file),
    ``profiles`` (explicit gate profiles) or ``curves`` (CSV curve files).
    """

    model: str = "fit"
    pulse_fwhm: float = 100.0
    gate_width: float = 500.0
    centers: tuple[float, float] = (50.0, 150.0)
    peaks: tuple[float, float] = (0.1, 0.1)
    edges: tuple[float, float] = (100.0, 100.0)
    y0: float = DEFAULT_Y0
    fixture: str = "shift_counts.csv"
    curves: tuple[str, str] = ("", "")
    base_dir: Path = Path(".")

    @property
    def dark_count_prob(self) -> float:
        return dark_prob_from_yield(self.y0)

    def build(self, session: SessionConfig) -> DetectorPair:
        dark = self.dark_count_prob
        if self.model == "fit":
            counts = read_count_csv(_resolve(self.fixture, self.base_dir))
            targets = {c.shift: (c.d0 / c.n_sent, c.d1 / c.n_sent) for c in counts}
            pair = fit_pair_to_rates(targets, session.mean_arriving, dark, self.pulse_fwhm,
                                     self.centers, self.gate_width)
        elif self.model == "profiles":
            pair = DetectorPair(GateProfile(self.peaks[0], self.centers[0], self.gate_width, self.edges[0]),
                                GateProfile(self.peaks[1], self.centers[1], self.gate_width, self.edges[1]), dark)
        elif self.model == "curves":
            pair = DetectorPair(read_curve_csv(_resolve(self.curves[0], self.base_dir)),
                                read_curve_csv(_resolve(self.curves[1], self.base_dir)), dark)
        else:
            raise ConfigError(f"unknown detector model {self.model!r}")
        return pair.blurred(self.pulse_fwhm) if self.pulse_fwhm > 0 else pair


def _resolve(name: str, base: Path) -> Path:
    p = Path(name)
    if p.is_absolute() and p.exists():
        return p
    for cand in (base / p, Path(str(DATA / name))):
        if cand.exists():
            return cand
    raise FixtureMissingError(f"cannot find {name!r} (looked in {base} and the bundled data)")


@dataclass(frozen=True)
class Scenario:
    session: SessionConfig = field(default_factory=SessionConfig)
    detectors: DetectorSpec = field(default_factory=DetectorSpec)
    calibration: CalibrationModel = field(default_factory=CalibrationModel)
    strategy: ShiftStrategy | str = "balanced"
    sweep: tuple[float, ...] = (-250.0, 500.0)
    sweep_step: float = 50.0
    candidates: tuple[float, ...] = ()
    probe_fraction: float = 0.0
    ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY
    output_dir: Path = Path("out")
    workers: int = 1

    def __post_init__(self):
        for s in self.sweep:
            if not math.isclose(s / self.sweep_step, round(s / self.sweep_step), abs_tol=1e-9):
                raise ConfigError(f"sweep shift {s} is not a multiple of the {self.sweep_step} ps step")
        if isinstance(self.strategy, str) and self.strategy not in ("balanced", "optimize"):
            raise ConfigError(f"strategy must be a mode, 'balanced' or 'optimize', got {self.strategy!r}")

    @property
    def y0(self) -> float:
        return self.detectors.y0


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def load_scenario(path: str | Path | None = None, seed: int | None = None, out: str | Path | None = None,
                  pulses: int | None = None, workers: int | None = None) -> Scenario:
    """Read a sectioned key-value scenario file; command-line overrides win."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        cp.read_string(Path(str(DATA / "reference.ini")).read_text())
        base = Path(".")
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        cp.read(path)
        base = path.parent
    sec = lambda name: cp[name] if cp.has_section(name) else {}

    s = sec("session")
    session = SessionConfig(
        n_pulses=int(float(s.get("n_pulses", 20_966_400))),
        mean_photon_number=float(s.get("mean_photon_number", 0.1)),
        intrinsic_flip_prob=float(s.get("intrinsic_flip_prob", SessionConfig.intrinsic_flip_prob)),
        channel_transmittance=float(s.get("channel_transmittance", SessionConfig.channel_transmittance)),
        seed=int(s.get("seed", DEFAULT_SEED)),
    )
    if seed is not None:
        session = replace(session, seed=seed)
    if pulses is not None:
        session = replace(session, n_pulses=pulses)

    d = sec("detectors")
    pair2 = lambda key, default: (float(d.get(f"{key}0", default[0])), float(d.get(f"{key}1", default[1])))
    detectors = DetectorSpec(
        model=d.get("model", "fit").strip(),
        pulse_fwhm=float(d.get("pulse_fwhm_ps", 100.0)),
        gate_width=float(d.get("gate_width_ps", 500.0)),
        centers=(float(d.get("center0_ps", 50.0)), float(d.get("center1_ps", 150.0))),
        peaks=pair2("peak", (0.1, 0.1)),
        edges=(float(d.get("edge0_ps", 100.0)), float(d.get("edge1_ps", 100.0))),
        y0=float(d.get("y0", DEFAULT_Y0)),
        fixture=d.get("fixture", "shift_counts.csv").strip(),
        curves=(d.get("curve0", "").strip(), d.get("curve1", "").strip()),
        base_dir=base,
    )

    c = sec("calibration")
    calibration = CalibrationModel(
        nominal_offset=float(c.get("nominal_offset_ps", 0.0)),
        max_deviation=float(c.get("max_deviation_ps", 100.0)),
        deviation_prob=float(c.get("deviation_prob", 106 / 2844)),
        residual_jitter=float(c.get("residual_jitter_ps", 20.0)),
    )

    st = sec("strategy")
    mode = st.get("mode", "balanced").strip()
    strategy: ShiftStrategy | str
    if mode in ("balanced", "optimize"):
        strategy = mode
    else:
        strategy = ShiftStrategy.from_config(st)
    sw = sec("sweep")
    a = sec("attack")
    b = sec("bounds")
    o = sec("output")
    return Scenario(
        session=session,
        detectors=detectors,
        calibration=calibration,
        strategy=strategy,
        sweep=_floats(sw.get("shifts_ps", "-250, 500")),
        sweep_step=float(sw.get("step_ps", 50.0)),
        candidates=_floats(a.get("candidates_ps", "")) or _floats(st.get("candidates_ps", "")),
        probe_fraction=float(a.get("probe_fraction", 0.0)),
        ec_inefficiency=float(b.get("ec_inefficiency", DEFAULT_EC_INEFFICIENCY)),
        output_dir=Path(out) if out is not None else base / o.get("dir", "out").strip(),
        workers=workers if workers is not None else int(sec("run").get("workers", 1)),
    )


def constant_strategy(shift: float) -> ShiftStrategy:
    return ShiftStrategy(shift_a=shift, mode="constant_a")


@dataclass
class SweepRow:
    shift: float
    d0: int
    d1: int
    n: int
    qber: float
    mismatch: float


SWEEP_HEADER = ["shift_ps", "d0", "d1", "n", "qber", "mismatch"]


def run_sweep(scenario: Scenario, pair: DetectorPair | None = None) -> list[SweepRow]:
    """One constant-shift session per sweep point, ordered by shift."""
    pair = pair if pair is not None else scenario.detectors.build(scenario.session)

    def point(i_shift):
        i, shift = i_shift
        cfg = replace(scenario.session, seed=(scenario.session.seed + i) % 2**64)
        try:
            res = run_session(cfg, pair, constant_strategy(shift))
        except Exception as exc:
            raise type(exc)(f"at shift {shift} ps: {exc}") from exc
        s = res.summaries["A"]
        q = qber(res.table, "A") if res.table.total("A") > 0 else float("nan")
        mm = ratio_of_rates(s.d0, s.d1) if s.d0 + s.d1 > 0 else float("nan")
        return SweepRow(shift, int(s.d0), int(s.d1), int(s.n_sent), q, mm)

    # seeds follow sweep order, results are reported sorted by shift
    jobs = list(enumerate(scenario.sweep))
    if scenario.workers > 1:
        with ThreadPoolExecutor(scenario.workers) as ex:
            rows = list(ex.map(point, jobs))
    else:
        rows = [point(j) for j in jobs]
    return sorted(rows, key=lambda r: r.shift)


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([repr(float(r.shift)), r.d0, r.d1, r.n, repr(float(r.qber)), repr(float(r.mismatch))])
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[SweepRow]:
    return [SweepRow(float(r["shift_ps"]), int(r["d0"]), int(r["d1"]), int(r["n"]), float(r["qber"]),
                     float(r["mismatch"])) for r in csv.DictReader(io.StringIO(text))]


class ExpectedEvaluator:
    """Noise-free bounds for a candidate strategy, from expected session counts."""

    def __init__(self, cfg: SessionConfig, pair: DetectorPair, y0: float = DEFAULT_Y0,
                 ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY):
        self.cfg, self.pair, self.y0, self.f = cfg, pair, y0, ec_inefficiency

    def counts(self, shift: float) -> CountSummary:
        return expected_session(self.cfg, self.pair, constant_strategy(shift)).summaries["A"]

    def analysis(self, strategy: ShiftStrategy) -> Analysis:
        res = expected_session(self.cfg, self.pair, strategy)
        return analyze(res.table, strategy.p_a, res.summaries, self.cfg.mean_photon_number, self.y0, self.f)

    def bounds(self, strategy: ShiftStrategy) -> tuple[float, float]:
        r = self.analysis(strategy).report
        return r.k_lower, r.k_upper


@dataclass
class AttackOutcome:
    strategy: ShiftStrategy
    calibration_runs: dict[str, SessionResult]
    session: SessionResult
    analysis: Analysis
    probe: object | None = None


def run_attack(scenario: Scenario, pair: DetectorPair | None = None) -> AttackOutcome:
    """Choose Eve's strategy, run the attacked session and evaluate the bounds.

    ``balanced``: constant-shift sessions at shift_a and shift_b give the
    counts that fix p_A. ``optimize``: exhaustive search over the candidate
    shifts using expected counts. An explicit strategy is used as is.
    """
    pair = pair if pair is not None else scenario.detectors.build(scenario.session)
    cfg = scenario.session
    runs: dict[str, SessionResult] = {}
    strategy = scenario.strategy
    if strategy == "optimize":
        cands = scenario.candidates or scenario.sweep
        ev = ExpectedEvaluator(cfg, pair, scenario.y0, scenario.ec_inefficiency)
        strategy = optimize_shift_pair(pair, cands, ev)
    elif strategy == "balanced":
        a, b = (-250.0, 500.0) if len(scenario.sweep) != 2 else tuple(scenario.sweep)
        runs["A"] = run_session(replace(cfg, seed=(cfg.seed + 1) % 2**64), pair, constant_strategy(a),
                                scenario.workers)
        runs["B"] = run_session(replace(cfg, seed=(cfg.seed + 2) % 2**64), pair, constant_strategy(b),
                                scenario.workers)
        p_a = balance_pa(runs["A"].summaries["A"], runs["B"].summaries["A"])
        strategy = ShiftStrategy(a, b, p_a, "mixture")
    probe = None
    if scenario.probe_fraction > 0:
        probe = probe_mismatch(SessionProbe(cfg, pair), [strategy.shift_a, strategy.shift_b],
                               scenario.probe_fraction, cfg.n_pulses)
    session = run_session(cfg, pair, strategy, scenario.workers)
    an = analyze(session.table, strategy.p_a if strategy.mode == "mixture" else _single_weight(strategy),
                 session.summaries, cfg.mean_photon_number, scenario.y0, scenario.ec_inefficiency)
    return AttackOutcome(strategy, runs, session, an, probe)


def _single_weight(strategy: ShiftStrategy) -> float:
    if strategy.mode == "constant_a":
        return 1.0
    if strategy.mode == "constant_b":
        return 0.0
    raise ConfigError("bounds need an attacked session (mode mixture, constant_a or constant_b)")


# --- fixture reproduction -------------------------------------------------------

REFERENCE_VALUES = {
    "qber_a": 0.06135,
    "qber_b": 0.05365,
    "p_a": 0.2303,
    "d01": 3479.0,
    "e": 0.0568,
    "k_upper": 1131.0,
    "k_lower": 1297.0,
}


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    expected: float
    tolerance: float
    relative: bool = False

    @property
    def passed(self) -> bool:
        tol = self.tolerance * abs(self.expected) if self.relative else self.tolerance
        return abs(self.value - self.expected) <= tol

    def line(self) -> str:
        tol = f"{100 * self.tolerance:g}%" if self.relative else f"{self.tolerance:g}"
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<10} {self.value:>12.6g}  expected {self.expected:g} +/- {tol}"


@dataclass
class FixtureReproduction:
    p_a: float
    analysis: Analysis
    checks: list[Check]
    breach: bool

    @property
    def passed(self) -> bool:
        return self.breach and all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = ["bounds summary from fixtures", "", self.analysis.table(), ""]
        lines += [c.line() for c in self.checks]
        lines.append(f"{'PASS' if self.breach else 'FAIL'}  breach     {str(self.breach):>12}  expected True")
        return "\n".join(lines)


def load_reference_fixtures(data_dir: str | Path | None = None) -> SessionResult:
    """Bundled shift counts and sifted cells as a per-shift session result."""
    base = Path(data_dir) if data_dir is not None else Path(str(DATA))
    a_path, b_path = base / "shift_counts.csv", base / "sifted_cells.csv"
    for p in (a_path, b_path):
        if not p.exists():
            raise FixtureMissingError(f"fixture {p} is missing")
    table = read_sifted_csv(b_path)
    by_shift = {c.shift: c for c in read_count_csv(a_path)}
    summaries = {}
    for label, shift in table.shifts.items():
        if shift not in by_shift:
            raise FixtureMissingError(f"no shift-count row for shift {shift} ps")
        summaries[label] = by_shift[shift]
    return SessionResult(table, summaries)


def reproduce_paper(fixtures: SessionResult | None = None, mu: float = 0.1, y0: float = DEFAULT_Y0,
                    ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY) -> FixtureReproduction:
    """Recompute the bounds summary from the bundled fixtures. Pure arithmetic."""
    fx = fixtures if fixtures is not None else load_reference_fixtures()
    t, s = fx.table, fx.summaries
    p_a = balance_pa(s["A"], s["B"])
    an = analyze(t, p_a, s, mu, y0, ec_inefficiency)
    m, r = an.merged, an.report
    ex = REFERENCE_VALUES
    checks = [
        Check("QBER(A)", qber(t, "A"), ex["qber_a"], 5e-5),
        Check("QBER(B)", qber(t, "B"), ex["qber_b"], 5e-5),
        Check("p_A", p_a, ex["p_a"], 5e-5),
        Check("d_0", m.d0, ex["d01"], 1.0),
        Check("d_1", m.d1, ex["d01"], 1.0),
        Check("E", m.qber, ex["e"], 2e-4),
        Check("K_U", r.k_upper, ex["k_upper"], 0.01, relative=True),
        Check("K_L", r.k_lower, ex["k_lower"], 0.05, relative=True),
    ]
    return FixtureReproduction(p_a, an, checks, r.breach)


# --- calibration statistics -----------------------------------------------------

@dataclass(frozen=True)
class CalibrationStats:
    n_runs: int
    n_maximal: int
    ci_low: float
    ci_high: float
    confidence: float

    @property
    def frequency(self) -> float:
        return self.n_maximal / self.n_runs

    def to_csv(self) -> str:
        return ("n_runs,n_maximal,frequency,ci_low,ci_high,confidence\n"
                f"{self.n_runs},{self.n_maximal},{self.frequency!r},{self.ci_low!r},{self.ci_high!r},{self.confidence!r}\n")


def calibration_stats(model: CalibrationModel, n_runs: int, rng: np.random.Generator,
                      confidence: float = 0.9973) -> CalibrationStats:
    """Frequency of maximal activation-offset deviations over ``n_runs`` calibrations,
    with a Wilson interval (default level ~3 sigma)."""
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    dev = sample_calibration(model, rng, n_runs)
    k = int(is_maximal(dev, model).sum())
    ci = stats.binomtest(k, n_runs).proportion_ci(confidence_level=confidence, method="wilson")
    return CalibrationStats(n_runs, k, float(ci.low), float(ci.high), confidence)


def expected_rates_table(pair: DetectorPair, shifts: Sequence[float], mean_arriving: float) -> list[tuple[float, float, float]]:
    return [(float(s), *map(float, expected_bit_rates(pair, s, mean_arriving))) for s in shifts]


def write_outputs(out_dir: Path, files: Mapping[str, str]) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        p = out_dir / name
        p.write_text(text)
        written.append(p)
    return written


def attack_files(outcome: AttackOutcome) -> dict[str, str]:
    cp = configparser.ConfigParser()
    cp["strategy"] = outcome.strategy.to_config()
    buf = io.StringIO()
    cp.write(buf)
    files = {
        "strategy.ini": buf.getvalue(),
        "sifted.csv": sifted_csv(outcome.session.table),
        "counts.csv": count_csv(outcome.session.summaries),
        "bounds.csv": outcome.analysis.report.to_csv(),
        "report.txt": outcome.analysis.table() + "\n",
    }
    for label, run in outcome.calibration_runs.items():
        files[f"constant_{label}_counts.csv"] = count_csv(run.summaries)
    if outcome.probe is not None:
        files["probe.csv"] = outcome.probe.to_csv()
    return files
