"""Gated detector pair with time-dependent efficiency mismatch.

Times are in picoseconds throughout. A detector's response to a pulse arriving
at time ``t`` is its gate profile evaluated at ``t``; the optical pulse width
enters through :func:`blur_with_pulse`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy import optimize
from scipy.special import ndtr

from .errors import ConfigError, UndefinedRatioError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
MAX_DARK_COUNT_PROB = 1e-2


@dataclass(frozen=True)
class GateProfile:
    """Plateau of width ``gate_width`` with Gaussian-error-function edges."""

    peak_efficiency: float
    center_time: float = 0.0
    gate_width: float = 500.0
    edge_width: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.peak_efficiency <= 1.0:
            raise ConfigError(f"peak_efficiency must be in (0, 1], got {self.peak_efficiency}")
        if self.gate_width <= 0 or self.edge_width <= 0:
            raise ConfigError("gate_width and edge_width must be positive")

    @property
    def center(self) -> float:
        return self.center_time

    def efficiency(self, t):
        # Written in |t - c| so the profile is exactly symmetric; the ndtr
        # arguments keep both tails free of cancellation.
        u = np.abs(np.asarray(t, dtype=float) - self.center_time)
        half, s = 0.5 * self.gate_width, self.edge_width
        norm = ndtr(half / s) - ndtr(-half / s)
        out = self.peak_efficiency * (ndtr((half - u) / s) - ndtr(-(half + u) / s)) / norm
        return np.minimum(out, self.peak_efficiency)

    def support(self) -> tuple[float, float]:
        """Interval outside which the efficiency is below 1e-15 of peak."""
        reach = 0.5 * self.gate_width + 9.0 * self.edge_width
        return self.center_time - reach, self.center_time + reach


@dataclass(frozen=True)
class EfficiencyCurve:
    """Uniformly sampled efficiency curve, linearly interpolated between samples.

    Outside the sampled range the efficiency is 0 (gate closed).
    """

    shifts: np.ndarray
    efficiencies: np.ndarray
    _spacing: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shifts = np.asarray(self.shifts, dtype=float)
        eff = np.asarray(self.efficiencies, dtype=float)
        if shifts.ndim != 1 or shifts.shape != eff.shape or len(shifts) < 2:
            raise ConfigError("curve needs at least two (shift, efficiency) samples")
        steps = np.diff(shifts)
        if np.any(steps <= 0):
            raise ConfigError("curve shifts must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9):
            raise ConfigError("curve shifts must be uniformly spaced")
        if np.any(eff < 0) or np.any(eff > 1):
            raise ConfigError("curve efficiencies must lie in [0, 1]")
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "efficiencies", eff)
        object.__setattr__(self, "_spacing", float(steps[0]))

    @property
    def spacing(self) -> float:
        return self._spacing

    @property
    def peak_efficiency(self) -> float:
        return float(self.efficiencies.max())

    @property
    def center(self) -> float:
        """Shift of the maximum sample (first one on ties)."""
        return float(self.shifts[np.argmax(self.efficiencies)])

    def efficiency(self, t):
        return np.interp(np.asarray(t, dtype=float), self.shifts, self.efficiencies, left=0.0, right=0.0)

    def support(self) -> tuple[float, float]:
        return float(self.shifts[0]), float(self.shifts[-1])

    def resample(self, spacing: float = 50.0) -> "EfficiencyCurve":
        lo = math.ceil(self.shifts[0] / spacing) * spacing
        hi = math.floor(self.shifts[-1] / spacing) * spacing
        grid = np.arange(lo, hi + 0.5 * spacing, spacing)
        return EfficiencyCurve(grid, self.efficiency(grid))

    def shifted(self, delta: float) -> "EfficiencyCurve":
        return EfficiencyCurve(self.shifts + delta, self.efficiencies)

    def integral(self) -> float:
        return float(np.trapezoid(self.efficiencies, self.shifts))


Response = Union[GateProfile, EfficiencyCurve]


def profile_efficiency(profile: Response, t):
    """Per-photon detection efficiency of ``profile`` at arrival time ``t``."""
    return profile.efficiency(t)


def sample_profile(profile: Response, spacing: float = 50.0, span: tuple[float, float] | None = None) -> EfficiencyCurve:
    lo, hi = span if span is not None else profile.support()
    lo = math.floor(lo / spacing) * spacing
    hi = math.ceil(hi / spacing) * spacing
    grid = np.arange(lo, hi + 0.5 * spacing, spacing)
    return EfficiencyCurve(grid, profile.efficiency(grid))


def pulse_kernel(pulse_fwhm: float, step: float) -> np.ndarray:
    """Unit-sum Gaussian intensity kernel sampled at ``step``, truncated at 8 sigma."""
    if pulse_fwhm < 0:
        raise ConfigError(f"pulse_fwhm must be non-negative, got {pulse_fwhm}")
    sigma = pulse_fwhm * FWHM_TO_SIGMA
    half = int(math.ceil(8.0 * sigma / step))
    if half == 0:
        return np.ones(1)
    x = np.arange(-half, half + 1) * step
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_with_pulse(profile: Response, pulse_fwhm: float, step: float = 1.0) -> EfficiencyCurve:
    """Effective efficiency seen by a Gaussian pulse of the given FWHM.

    Returns the convolution of ``profile`` with the unit-area pulse intensity,
    sampled every ``step`` ps over the profile support widened by the kernel
    reach. ``pulse_fwhm == 0`` returns the profile samples unchanged.
    """
    kernel = pulse_kernel(pulse_fwhm, step)
    half = len(kernel) // 2
    lo, hi = profile.support()
    lo = math.floor(lo / step) * step - half * step
    hi = math.ceil(hi / step) * step + half * step
    n = int(round((hi - lo) / step)) + 1
    grid = lo + step * np.arange(n)
    if half == 0:
        return EfficiencyCurve(grid, profile.efficiency(grid))
    padded = lo + step * np.arange(-half, n + half)
    values = np.convolve(profile.efficiency(padded), kernel, mode="valid")
    return EfficiencyCurve(grid, np.clip(values, 0.0, 1.0))


@dataclass(frozen=True)
class DetectorPair:
    """Detector ``d0`` registers bit 0, ``d1`` registers bit 1."""

    d0: Response
    d1: Response
    dark_count_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dark_count_prob <= MAX_DARK_COUNT_PROB:
            raise ConfigError(f"dark_count_prob must be in [0, {MAX_DARK_COUNT_PROB}], got {self.dark_count_prob}")

    @property
    def activation_offset(self) -> float:
        return self.d1.center - self.d0.center

    def efficiencies(self, shift) -> tuple[np.ndarray, np.ndarray]:
        return self.d0.efficiency(shift), self.d1.efficiency(shift)

    def blurred(self, pulse_fwhm: float, step: float = 1.0) -> "DetectorPair":
        return replace(self, d0=blur_with_pulse(self.d0, pulse_fwhm, step), d1=blur_with_pulse(self.d1, pulse_fwhm, step))

    def with_offset_deviation(self, delta: float) -> "DetectorPair":
        """Move detector 1's activation time by ``delta`` ps."""
        d1 = self.d1.shifted(delta) if isinstance(self.d1, EfficiencyCurve) else replace(
            self.d1, center_time=self.d1.center_time + delta)
        return replace(self, d1=d1)


def click_probability(efficiency, mean_photons: float, dark: float):
    """Probability a detector fires when a coherent pulse of the given mean photon
    number reaches it, dark counts included."""
    signal = -np.expm1(-mean_photons * np.asarray(efficiency, dtype=float))
    return signal + dark - signal * dark


def mismatch_ratio(pair: DetectorPair, shift, mean_photons: float = 1.0):
    """max(p0/p1, p1/p0) of the dark-count-inclusive click probabilities."""
    eta0, eta1 = pair.efficiencies(shift)
    p0 = click_probability(eta0, mean_photons, pair.dark_count_prob)
    p1 = click_probability(eta1, mean_photons, pair.dark_count_prob)
    return ratio_of_rates(p0, p1)


def ratio_of_rates(r0, r1):
    r0 = np.asarray(r0, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    if np.any((r0 == 0) & (r1 == 0)):
        raise UndefinedRatioError("both detectors have zero click probability")
    with np.errstate(divide="ignore"):
        out = np.maximum(r0 / r1, r1 / r0)
    return out if out.ndim else float(out)


def routed_outcomes(signal_click, dark: float):
    """Squashed outcome probabilities for a pulse routed to one detector.

    Returns ``(p_routed, p_other)``: the probability the decoded bit is the
    routed detector's bit, and that it is the other detector's bit. The routed
    detector fires from signal or dark count, the other from dark count only;
    double clicks split evenly.
    """
    s = np.asarray(signal_click, dtype=float)
    c = s + dark - s * dark
    p_routed = c * (1.0 - dark) + 0.5 * c * dark
    p_other = (1.0 - c) * dark + 0.5 * c * dark
    return p_routed, p_other


def expected_bit_rates(pair: DetectorPair, shift, mean_arriving: float):
    """Expected per-pulse rates of decoded bits 0 and 1, marginal over Alice's
    bit and both bases (each detector receives the pulse half the time)."""
    eta0, eta1 = pair.efficiencies(shift)
    s0 = -np.expm1(-mean_arriving * eta0)
    s1 = -np.expm1(-mean_arriving * eta1)
    r00, r01 = routed_outcomes(s0, pair.dark_count_prob)
    r11, r10 = routed_outcomes(s1, pair.dark_count_prob)
    return 0.5 * (r00 + r10), 0.5 * (r11 + r01)


@dataclass(frozen=True)
class CalibrationModel:
    nominal_offset: float = 0.0
    max_deviation: float = 100.0
    deviation_prob: float = 106 / 2844
    residual_jitter: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.deviation_prob <= 1.0:
            raise ConfigError("deviation_prob must be in [0, 1]")
        if self.max_deviation <= 0:
            raise ConfigError("max_deviation must be positive")
        if self.residual_jitter < 0:
            raise ConfigError("residual_jitter must be non-negative")


def sample_calibration(model: CalibrationModel, rng: np.random.Generator, size: int | None = None):
    """Deviation of the calibrated activation offset from its nominal value.

    With probability ``deviation_prob`` the result is +/-``max_deviation``
    (sign equiprobable); otherwise it is Gaussian with scale
    ``residual_jitter``, kept strictly inside the maximal deviation.
    """
    n = 1 if size is None else size
    maximal = rng.random(n) < model.deviation_prob
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    inner = np.nextafter(model.max_deviation, 0.0)
    residual = np.clip(model.residual_jitter * rng.standard_normal(n), -inner, inner)
    out = np.where(maximal, sign * model.max_deviation, residual)
    return float(out[0]) if size is None else out


def is_maximal(deviation, model: CalibrationModel):
    return np.abs(deviation) == model.max_deviation


def fit_pair_to_rates(
    targets: dict[float, tuple[float, float]],
    mean_arriving: float,
    dark_count_prob: float,
    pulse_fwhm: float = 100.0,
    centers: tuple[float, float] = (0.0, 200.0),
    gate_width: float = 500.0,
    initial_edges: tuple[float, float] = (150.0, 300.0),
) -> DetectorPair:
    """Fit the peak efficiency and edge width of each detector so the blurred pair
    reproduces per-pulse decoded-bit rates at two shifts.

    ``targets`` maps exactly two shifts to ``(rate_bit0, rate_bit1)``;
    ``mean_arriving`` is the mean photon number reaching Bob (mu times channel
    transmittance). Centers and gate width are held fixed.
    """
    if len(targets) != 2:
        raise ConfigError("fit needs rate targets at exactly two shifts")
    shifts = sorted(targets)
    want = np.log(np.array([targets[s] for s in shifts], dtype=float))

    def build(params):
        p0, e0, p1, e1 = np.exp(params)
        return DetectorPair(
            GateProfile(min(p0, 1.0), centers[0], gate_width, e0),
            GateProfile(min(p1, 1.0), centers[1], gate_width, e1),
            dark_count_prob,
        )

    def residual(params):
        pair = build(params).blurred(pulse_fwhm)
        got = np.array([expected_bit_rates(pair, s, mean_arriving) for s in shifts])
        return (np.log(got) - want).ravel()

    x0 = np.log([0.5, initial_edges[0], 0.5, initial_edges[1]])
    lower = np.log([1e-4, 5.0, 1e-4, 5.0])
    upper = np.log([1.0, 2000.0, 1.0, 2000.0])
    sol = optimize.least_squares(residual, x0, bounds=(lower, upper), xtol=1e-14, ftol=1e-14, gtol=1e-14)
    if np.max(np.abs(sol.fun)) > 1e-6:
        raise ConfigError(f"could not fit detector curves to the target rates (max log error {np.max(np.abs(sol.fun)):.2e})")
    return build(sol.x)


def write_curve_csv(curve: EfficiencyCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shift_ps", "efficiency"])
        for s, e in zip(curve.shifts, curve.efficiencies):
            w.writerow([repr(float(s)), repr(float(e))])


def read_curve_csv(path: str | Path) -> EfficiencyCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["shift_ps", "efficiency"]:
        raise ConfigError(f"{path}: expected header 'shift_ps,efficiency'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:] if a.strip()], dtype=float)
    return EfficiencyCurve(data[:, 0], data[:, 1])


def curve_from_samples(samples: Sequence[tuple[float, float]]) -> EfficiencyCurve:
    arr = np.asarray(samples, dtype=float)
    return EfficiencyCurve(arr[:, 0], arr[:, 1])
