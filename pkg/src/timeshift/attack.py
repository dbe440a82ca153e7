"""Eve's time-shift attack: strategy, count balancing, probing, and shift-pair search."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Protocol, Sequence

import numpy as np

from .errors import ConfigError, EmptyCellError, InsufficientDataError, NoBreachError, UnbalanceableError

if TYPE_CHECKING:
    from .detector import DetectorPair
    from .protocol import CountSummary, SiftedTable

MODES = ("constant_a", "constant_b", "mixture", "none")
MIN_ANNOUNCEMENTS = 100


@dataclass(frozen=True)
class ShiftStrategy:
    shift_a: float = -250.0
    shift_b: float = 500.0
    p_a: float = 0.5
    mode: str = "mixture"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.p_a <= 1.0:
            raise ConfigError(f"p_a must be in [0, 1], got {self.p_a}")
        if self.mode == "mixture" and self.shift_a == self.shift_b:
            raise ConfigError("mixture needs two distinct shifts")

    def labels(self) -> dict[str, float]:
        """Shift label -> arrival-time shift (ps) for every label this strategy emits."""
        return {
            "constant_a": {"A": self.shift_a},
            "constant_b": {"B": self.shift_b},
            "mixture": {"A": self.shift_a, "B": self.shift_b},
            "none": {"none": 0.0},
        }[self.mode]

    def weights(self) -> dict[str, float]:
        if self.mode == "mixture":
            return shift_weights(self.p_a)
        return {k: 1.0 for k in self.labels()}

    def choose_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Label indices (into :meth:`labels`) for ``n`` pulses."""
        if self.mode != "mixture":
            return np.zeros(n, dtype=np.int8)
        return (rng.random(n) >= self.p_a).astype(np.int8)

    def to_config(self) -> dict[str, str]:
        return {"shift_a_ps": repr(float(self.shift_a)), "shift_b_ps": repr(float(self.shift_b)),
                "p_a": repr(float(self.p_a)), "mode": self.mode}

    @classmethod
    def from_config(cls, section: Mapping[str, str]) -> "ShiftStrategy":
        return cls(float(section.get("shift_a_ps", -250.0)), float(section.get("shift_b_ps", 500.0)),
                   float(section.get("p_a", 0.5)), section.get("mode", "mixture").strip())


def choose_shift(strategy: ShiftStrategy, rng: np.random.Generator) -> str | None:
    """Eve's shift label for one pulse, or None when she does not attack."""
    if strategy.mode == "none":
        return None
    if strategy.mode == "constant_a":
        return "A"
    if strategy.mode == "constant_b":
        return "B"
    return "A" if rng.random() < strategy.p_a else "B"


def balance_pa(summary_a: "CountSummary", summary_b: "CountSummary") -> float:
    """p_A that equalizes Bob's expected bit-0 and bit-1 counts.

    Solves p d0_A + (1-p) d0_B = p d1_A + (1-p) d1_B. Shift A must favor one
    bit and shift B the other.
    """
    bias_a = summary_a.d0 - summary_a.d1
    bias_b = summary_b.d1 - summary_b.d0
    if not ((bias_a > 0 and bias_b > 0) or (bias_a < 0 and bias_b < 0)):
        raise UnbalanceableError(
            f"shifts do not favor opposite bits (A: d0-d1={bias_a}, B: d1-d0={bias_b})")
    return bias_b / (bias_a + bias_b)


def shift_weights(p_a: float) -> dict[str, float]:
    # 1 - (1 - p) makes the pair swap bitwise under p -> 1 - p
    w_b = 1.0 - p_a
    return {"A": 1.0 - w_b, "B": w_b}


@dataclass(frozen=True)
class MergedStatistics:
    """What Alice and Bob see in the mixed session, reconstructed per shift."""

    d0: float
    d1: float
    qber: float
    detections: float  # sifted detections, Ñ·Q
    n_sifted: float  # Ñ

    @property
    def gain(self) -> float:
        return self.detections / self.n_sifted


def merged_statistics(table: "SiftedTable", p_a: float,
                      summaries: Mapping[str, "CountSummary"] | None = None) -> MergedStatistics:
    """Balanced-mixture counts and QBER from per-shift tables.

    Each shift's counts are turned into per-pulse rates and re-weighted by
    (p_a, 1 - p_a) over the session budget, so constant-shift runs and a
    mixed session are handled alike. Bit counts come from ``summaries``
    (all bases) when given, otherwise from the sifted table scaled up to
    the full pulse budget.
    """
    weights = {k: w for k, w in shift_weights(p_a).items() if w > 0}
    missing = [k for k in weights if k not in table.cells]
    if missing:
        raise EmptyCellError(f"table has no cells for shift(s) {missing}")
    n_tilde = table.n_sifted_basis
    detections = n_tilde * math.fsum(w * table.total(k) / table.sifted[k] for k, w in weights.items())
    errors = n_tilde * math.fsum(w * table.errors(k) / table.sifted[k] for k, w in weights.items())
    if detections <= 0:
        raise EmptyCellError("no sifted detections at the weighted shifts")
    if summaries is not None:
        d = [table.n_sent * math.fsum(w * (summaries[k].d0, summaries[k].d1)[y] / summaries[k].n_sent
                                      for k, w in weights.items()) for y in (0, 1)]
    else:
        d = [table.n_sent * math.fsum(w * float(table.cells[k][:, :, y].sum()) / table.sifted[k]
                                      for k, w in weights.items()) for y in (0, 1)]
    return MergedStatistics(d[0], d[1], errors / detections, detections, n_tilde)


@dataclass(frozen=True)
class ProbePoint:
    shift: float
    n_probe: int
    n0: int
    n1: int

    @property
    def n_detected(self) -> int:
        return self.n0 + self.n1

    @property
    def rate(self) -> float:
        return self.n_detected / self.n_probe

    @property
    def stderr(self) -> float:
        return _binomial_se(self.rate, self.n_probe)

    @property
    def rates(self) -> tuple[float, float]:
        return self.n0 / self.n_probe, self.n1 / self.n_probe

    @property
    def rate_stderrs(self) -> tuple[float, float]:
        return tuple(_binomial_se(r, self.n_probe) for r in self.rates)

    @property
    def ratio(self) -> float:
        r0, r1 = self.rates
        return max(r0 / r1, r1 / r0) if r0 > 0 and r1 > 0 else math.inf

    @property
    def ratio_stderr(self) -> float:
        (r0, r1), (s0, s1) = self.rates, self.rate_stderrs
        return self.ratio * math.hypot(s0 / r0, s1 / r1)


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class ProbeReport:
    points: tuple[ProbePoint, ...]

    def __getitem__(self, shift: float) -> ProbePoint:
        for p in self.points:
            if p.shift == shift:
                return p
        raise KeyError(shift)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shift_ps", "n_probe", "n_detected", "rate", "stderr", "rate0", "stderr0", "rate1", "stderr1"])
        for p in self.points:
            (r0, r1), (s0, s1) = p.rates, p.rate_stderrs
            w.writerow([repr(float(p.shift)), p.n_probe, p.n_detected, repr(p.rate), repr(p.stderr),
                        repr(r0), repr(s0), repr(r1), repr(s1)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ProbeReport":
        pts = []
        for r in csv.DictReader(io.StringIO(text)):
            n = int(r["n_probe"])
            pts.append(ProbePoint(float(r["shift_ps"]), n, round(float(r["rate0"]) * n), round(float(r["rate1"]) * n)))
        return cls(tuple(pts))


class ProbeRunner(Protocol):
    def __call__(self, shift_ps: float, n_probe: int) -> tuple[int, int]: ...


def probe_mismatch(runner: ProbeRunner, shifts: Sequence[float], probe_fraction: float,
                   n_pulses: int) -> ProbeReport:
    """Estimate per-detector click rates at each shift from a small probe subset.

    ``runner(shift, n)`` shifts ``n`` pulses and returns how many of them were
    decoded as 0 and as 1. Eve learns these from the public comparison of the
    probe pulses; she never sees the detectors directly.
    """
    if not 0.0 < probe_fraction <= 0.1:
        raise ConfigError(f"probe_fraction must be in (0, 0.1], got {probe_fraction}")
    n_probe = max(1, round(probe_fraction * n_pulses))
    points = []
    for s in shifts:
        n0, n1 = runner(s, n_probe)
        if n0 + n1 < MIN_ANNOUNCEMENTS:
            raise InsufficientDataError(
                f"shift {s} ps: {n0 + n1} announcements from {n_probe} probe pulses (need {MIN_ANNOUNCEMENTS})")
        points.append(ProbePoint(float(s), n_probe, int(n0), int(n1)))
    return ProbeReport(tuple(points))


class BoundsEvaluator(Protocol):
    def counts(self, shift: float) -> "CountSummary": ...

    def bounds(self, strategy: ShiftStrategy) -> tuple[float, float]: ...


@dataclass(frozen=True)
class ScoredPair:
    strategy: ShiftStrategy
    k_lower: float
    k_upper: float

    @property
    def gap(self) -> float:
        return self.k_lower - self.k_upper


def score_shift_pairs(pair: "DetectorPair", candidate_shifts: Sequence[float],
                      evaluator: BoundsEvaluator) -> list[ScoredPair]:
    """Balanced strategies for every (bit-0-favoring, bit-1-favoring) pair of candidates."""
    if not candidate_shifts:
        raise ConfigError("candidate shift list is empty")
    shifts = sorted(set(float(s) for s in candidate_shifts))
    eta0, eta1 = pair.efficiencies(np.array(shifts))
    favor0 = [s for s, a, b in zip(shifts, eta0, eta1) if a > b]
    favor1 = [s for s, a, b in zip(shifts, eta0, eta1) if b > a]
    counts = {s: evaluator.counts(s) for s in favor0 + favor1}
    scored = []
    for a in favor0:
        for b in favor1:
            try:
                p_a = balance_pa(counts[a], counts[b])
            except UnbalanceableError:
                continue
            strategy = ShiftStrategy(a, b, p_a, "mixture")
            k_lower, k_upper = evaluator.bounds(strategy)
            scored.append(ScoredPair(strategy, k_lower, k_upper))
    return scored


def optimize_shift_pair(pair: "DetectorPair", candidate_shifts: Sequence[float],
                        evaluator: BoundsEvaluator) -> ShiftStrategy:
    """Balanced shift pair maximizing K_L - K_U subject to K_L > 0.

    Exhaustive over candidate pairs; ties go to the smaller |shift_a| + |shift_b|.
    """
    scored = [s for s in score_shift_pairs(pair, candidate_shifts, evaluator)
              if s.k_lower > 0 and s.k_lower > s.k_upper]
    if not scored:
        raise NoBreachError("no candidate shift pair gives K_L > K_U")
    best = min(scored, key=lambda s: (-s.gap, abs(s.strategy.shift_a) + abs(s.strategy.shift_b)))
    return best.strategy
