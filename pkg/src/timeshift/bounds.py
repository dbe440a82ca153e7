"""Key-length bounds for the attacked session.

``K_L`` is what Alice and Bob would certify with an infinite-decoy GLLP
analysis, blind to the attack. ``K_U`` upper-bounds the key extractable
once Eve's knowledge of the shift (and hence the bias of Bob's result) is
accounted for. ``K_L > K_U`` means key was leaked without being noticed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .attack import MergedStatistics, merged_statistics, shift_weights
from .errors import ConfigError, EmptyCellError, InversionError
from .protocol import CountSummary, SiftedTable

DEFAULT_EC_INEFFICIENCY = 1.22
DEFAULT_Y0 = 2.26e-5
DEFAULT_MU = 0.1


def h2(x):
    """Binary Shannon entropy in bits, with 0 log 0 = 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(~((arr >= 0) & (arr <= 1))):
        raise ValueError(f"h2 argument outside [0, 1]: {x}")
    inner = (arr > 0) & (arr < 1)
    safe = np.where(inner, arr, 0.5)
    out = np.where(inner, -safe * np.log2(safe) - (1 - safe) * np.log2(1 - safe), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KeyRateInputs:
    n_sifted: float
    gain: float
    qber: float
    mu: float = DEFAULT_MU
    y0: float = DEFAULT_Y0
    ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0:
            raise ConfigError(f"gain must be in (0, 1], got {self.gain}")
        if not 0.0 <= self.qber <= 0.5:
            raise ConfigError(f"qber must be in [0, 0.5], got {self.qber}")
        if self.ec_inefficiency < 1.0:
            raise ConfigError("ec_inefficiency must be >= 1")
        if self.n_sifted * self.gain < 1.0:
            raise ConfigError("fewer than one expected sifted detection")
        if self.mu <= 0 or not 0.0 <= self.y0 < 1.0:
            raise ConfigError("need mu > 0 and y0 in [0, 1)")

    @property
    def detections(self) -> float:
        return self.n_sifted * self.gain

    @classmethod
    def from_merged(cls, merged: MergedStatistics, mu: float = DEFAULT_MU, y0: float = DEFAULT_Y0,
                    ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY) -> "KeyRateInputs":
        return cls(merged.n_sifted, merged.gain, merged.qber, mu, y0, ec_inefficiency)


@dataclass(frozen=True)
class DecoyEstimates:
    q0: float
    q1: float
    e1: float
    transmittance: float
    e1_clamped: bool = False


def ec_cost(inputs: KeyRateInputs) -> float:
    """Bits revealed by one-way error correction: Ñ Q f H2(E)."""
    return inputs.detections * inputs.ec_inefficiency * h2(inputs.qber)


def decoy_estimate(inputs: KeyRateInputs) -> DecoyEstimates:
    """Vacuum and single-photon gain and error under the infinite-decoy channel model.

    Inverts Q = 1 - (1 - Y0) exp(-eta mu) for the system transmittance eta,
    then Y1 = Y0 + eta - Y0 eta, Q1 = Y1 mu exp(-mu), Q0 = Y0 exp(-mu) and
    e1 = (E Q - Q0 / 2) / Q1, clamped to [0, 0.5]. ``e1_clamped`` is set
    when the numerator came out negative.
    """
    q, y0, mu = inputs.gain, inputs.y0, inputs.mu
    if q <= y0:
        raise InversionError(f"gain {q} does not exceed the dark yield {y0}")
    eta = (math.log1p(-y0) - math.log1p(-q)) / mu
    y1 = y0 + eta - y0 * eta
    q0 = y0 * math.exp(-mu)
    q1 = y1 * mu * math.exp(-mu)
    numerator = inputs.qber * q - 0.5 * q0
    clamped = numerator < 0
    e1 = min(max(numerator / q1, 0.0), 0.5)
    return DecoyEstimates(q0, q1, e1, eta, clamped)


def lower_bound(inputs: KeyRateInputs, decoy: DecoyEstimates) -> float:
    """K_L = -r_EC + Ñ [Q1 (1 - H2(e1)) + Q0]; never clamped."""
    return -ec_cost(inputs) + inputs.n_sifted * (decoy.q1 * (1.0 - h2(decoy.e1)) + decoy.q0)


@dataclass(frozen=True)
class ConditionalTerm:
    label: str
    basis: int
    p_shift: float  # Pr{Z1 = i}, detection-conditioned
    p_basis: float  # Pr{Z2 = j | Z1 = i}
    p_x0: float  # Pr{X = 0 | Z1 = i, Z2 = j}

    @property
    def entropy(self) -> float:
        return h2(self.p_x0)

    @property
    def weighted(self) -> float:
        return self.p_basis * self.p_shift * self.entropy


def conditional_terms(table: SiftedTable, p_a: float) -> list[ConditionalTerm]:
    """Per (shift, basis) probabilities from p_a-weighted sifted detections."""
    weights = {k: w for k, w in shift_weights(p_a).items() if w > 0}
    mass = {}
    for k in weights:
        if k not in table.cells or table.total(k) <= 0:
            raise EmptyCellError(f"no sifted detections at shift {k}")
        mass[k] = weights[k] * table.total(k) / table.sifted[k]
    norm = math.fsum(mass.values())
    terms = []
    for k in weights:
        c = table.cells[k]
        for j in (0, 1):
            row = float(c[j].sum())
            if row <= 0:
                raise EmptyCellError(f"no detections at shift {k} in basis {j}")
            terms.append(ConditionalTerm(k, j, mass[k] / norm, row / table.total(k), float(c[j, 0].sum()) / row))
    return terms


def upper_bound(table: SiftedTable, p_a: float, inputs: KeyRateInputs) -> float:
    """K_U = -r_EC + Ñ Q sum_{i,j} Pr{Z2=j|Z1=i} Pr{Z1=i} H2(Pr{X=0|Z1=i,Z2=j})."""
    terms = conditional_terms(table, p_a)
    return -ec_cost(inputs) + inputs.detections * math.fsum(t.weighted for t in terms)


@dataclass(frozen=True)
class BoundsReport:
    r_ec: float
    k_lower: float
    k_upper: float
    breach: bool
    notes: tuple[str, ...] = field(default=(), compare=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r_ec", "k_lower", "k_upper", "breach"])
        w.writerow([repr(self.r_ec), repr(self.k_lower), repr(self.k_upper), str(self.breach).lower()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BoundsReport":
        (row,) = list(csv.DictReader(io.StringIO(text)))
        return cls(float(row["r_ec"]), float(row["k_lower"]), float(row["k_upper"]), row["breach"] == "true")


def assess(k_lower: float, k_upper: float, r_ec: float = float("nan"), notes: tuple[str, ...] = ()) -> BoundsReport:
    return BoundsReport(r_ec, k_lower, k_upper, bool(k_lower > k_upper), notes)


@dataclass(frozen=True)
class Analysis:
    """Everything computed on the way from a per-shift table to the verdict."""

    p_a: float
    merged: MergedStatistics
    inputs: KeyRateInputs
    decoy: DecoyEstimates
    terms: list[ConditionalTerm]
    report: BoundsReport

    def table(self) -> str:
        m, r = self.merged, self.report
        rows = [
            ("f(E)", f"{self.inputs.ec_inefficiency:.2f}"),
            ("p_A", f"{100 * self.p_a:.1f}%"),
            ("mu", f"{self.inputs.mu:g}"),
            ("Y_0", f"{self.inputs.y0:.3g}"),
            ("d_0/1", f"{m.d0:.0f} / {m.d1:.0f}"),
            ("E", f"{100 * m.qber:.2f}%"),
            ("r_EC", f"{r.r_ec:.0f} bit"),
            ("K_U", f"{r.k_upper:.0f} bit"),
            ("K_L", f"{r.k_lower:.0f} bit"),
            ("breach", "yes" if r.breach else "no"),
        ]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v}" for k, v in rows]
        lines += [f"note: {n}" for n in r.notes]
        return "\n".join(lines)


def analyze(table: SiftedTable, p_a: float, summaries: Mapping[str, CountSummary] | None = None,
            mu: float = DEFAULT_MU, y0: float = DEFAULT_Y0,
            ec_inefficiency: float = DEFAULT_EC_INEFFICIENCY) -> Analysis:
    merged = merged_statistics(table, p_a, summaries)
    inputs = KeyRateInputs.from_merged(merged, mu, y0, ec_inefficiency)
    decoy = decoy_estimate(inputs)
    terms = conditional_terms(table, p_a)
    r_ec = ec_cost(inputs)
    k_upper = -r_ec + inputs.detections * math.fsum(t.weighted for t in terms)
    notes = ["Pr{Z1=i} is detection-conditioned"]
    if decoy.e1_clamped:
        notes.append("e1 numerator negative; e1 set to 0")
    report = assess(lower_bound(inputs, decoy), k_upper, r_ec, tuple(notes))
    return Analysis(p_a, merged, inputs, decoy, terms, report)
