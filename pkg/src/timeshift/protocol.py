"""Monte Carlo of a BB84 session under a time-shift strategy.

Pulses are simulated in fixed-size blocks. Block ``k`` draws from its own
generator seeded by ``(seed, k)``, so results do not depend on how blocks are
scheduled across workers.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .attack import ShiftStrategy
from .detector import DetectorPair, routed_outcomes
from .errors import ConfigError

BLOCK_SIZE = 1 << 20
NO_BIT = -1


@dataclass(frozen=True)
class SessionConfig:
    n_pulses: int = 20_966_400
    mean_photon_number: float = 0.1
    intrinsic_flip_prob: float = 0.02
    channel_transmittance: float = 0.3
    seed: int = 20080915

    def __post_init__(self):
        if self.n_pulses <= 0:
            raise ConfigError("n_pulses must be positive")
        if self.mean_photon_number <= 0:
            raise ConfigError("mean_photon_number must be positive")
        for name in ("intrinsic_flip_prob", "channel_transmittance"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def mean_arriving(self) -> float:
        """Mean photon number reaching Bob's detectors."""
        return self.mean_photon_number * self.channel_transmittance


@dataclass(frozen=True)
class PulseRecord:
    alice_bit: int
    alice_basis: int
    eve_shift: str | None
    bob_basis: int
    click0: bool
    click1: bool
    bob_bit: int | None


@dataclass
class PulseBatch:
    """Column-wise pulse records. ``eve_shift`` indexes ``labels``."""

    alice_bit: np.ndarray
    alice_basis: np.ndarray
    eve_shift: np.ndarray
    bob_basis: np.ndarray
    click0: np.ndarray
    click1: np.ndarray
    bob_bit: np.ndarray
    labels: tuple[str, ...]
    shifts: tuple[float, ...]

    def __len__(self):
        return len(self.alice_bit)

    def records(self) -> Iterator[PulseRecord]:
        for i in range(len(self)):
            y = int(self.bob_bit[i])
            yield PulseRecord(
                int(self.alice_bit[i]), int(self.alice_basis[i]), self.labels[self.eve_shift[i]],
                int(self.bob_basis[i]), bool(self.click0[i]), bool(self.click1[i]),
                None if y == NO_BIT else y,
            )

    @classmethod
    def from_records(cls, records: Iterable[PulseRecord], shifts: Mapping[str, float]) -> "PulseBatch":
        records = list(records)
        labels = tuple(shifts)
        col = lambda f, dt: np.array([f(r) for r in records], dtype=dt)
        return cls(
            col(lambda r: r.alice_bit, np.int8), col(lambda r: r.alice_basis, np.int8),
            col(lambda r: labels.index(r.eve_shift), np.int8), col(lambda r: r.bob_basis, np.int8),
            col(lambda r: r.click0, bool), col(lambda r: r.click1, bool),
            col(lambda r: NO_BIT if r.bob_bit is None else r.bob_bit, np.int8),
            labels, tuple(float(shifts[k]) for k in labels),
        )


@dataclass
class CountSummary:
    """Decoded-bit counts over all pulses sent at one shift (both bases)."""

    d0: float
    d1: float
    n_sent: int
    shift: float = 0.0

    def __post_init__(self):
        if self.d0 < 0 or self.d1 < 0 or self.d0 + self.d1 > self.n_sent:
            raise ConfigError("counts must satisfy 0 <= d0 + d1 <= n_sent")

    def __add__(self, other: "CountSummary") -> "CountSummary":
        return CountSummary(self.d0 + other.d0, self.d1 + other.d1, self.n_sent + other.n_sent, self.shift)


@dataclass
class SiftedTable:
    """Basis-matched detection counts ``cells[label][z2, x, y]`` per shift label.

    ``sent`` and ``sifted`` hold per-label pulse counts; ``n_sent`` and
    ``n_sifted_basis`` the session totals (Ñ is ``n_sifted_basis``).
    """

    cells: dict[str, np.ndarray]
    shifts: dict[str, float]
    sent: dict[str, int]
    sifted: dict[str, int]
    n_sent: int
    n_sifted_basis: int
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        for k, c in self.cells.items():
            c = np.asarray(c)
            if c.shape != (2, 2, 2):
                raise ConfigError(f"cells for {k} must have shape (2, 2, 2)")
            if np.any(c < 0):
                raise ConfigError("counts must be non-negative")
            self.cells[k] = c
        if self.n_sifted_basis > self.n_sent:
            raise ConfigError("n_sifted_basis cannot exceed n_sent")
        if sum(float(c.sum()) for c in self.cells.values()) > self.n_sifted_basis:
            raise ConfigError("detections cannot exceed n_sifted_basis")

    @property
    def labels(self) -> list[str]:
        return list(self.cells)

    def total(self, label: str) -> float:
        return float(self.cells[label].sum())

    def errors(self, label: str) -> float:
        c = self.cells[label]
        return float(c[:, 0, 1].sum() + c[:, 1, 0].sum())

    def relabeled(self, mapping: Mapping[str, str]) -> "SiftedTable":
        m = lambda d: {mapping.get(k, k): v for k, v in d.items()}
        return SiftedTable(m(self.cells), m(self.shifts), m(self.sent), m(self.sifted),
                           self.n_sent, self.n_sifted_basis, list(self.notes))

    def __add__(self, other: "SiftedTable") -> "SiftedTable":
        labels = list(dict.fromkeys([*self.cells, *other.cells]))
        zero = np.zeros((2, 2, 2), dtype=np.int64)
        get = lambda t, k: t.cells.get(k, zero)
        return SiftedTable(
            {k: get(self, k) + get(other, k) for k in labels},
            {**self.shifts, **other.shifts},
            {k: self.sent.get(k, 0) + other.sent.get(k, 0) for k in labels},
            {k: self.sifted.get(k, 0) + other.sifted.get(k, 0) for k in labels},
            self.n_sent + other.n_sent,
            self.n_sifted_basis + other.n_sifted_basis,
        )


@dataclass
class SessionResult:
    table: SiftedTable
    summaries: dict[str, CountSummary]


def squash(click0: bool, click1: bool, rng: np.random.Generator) -> int | None:
    """Decoded bit for one click pattern; double clicks give a random bit."""
    if click0 and click1:
        return int(rng.integers(2))
    if click0:
        return 0
    if click1:
        return 1
    return None


def squash_many(click0: np.ndarray, click1: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    coin = rng.integers(0, 2, size=click0.shape, dtype=np.int8)
    y = np.full(click0.shape, NO_BIT, dtype=np.int8)
    y[click0 & ~click1] = 0
    y[click1 & ~click0] = 1
    both = click0 & click1
    y[both] = coin[both]
    return y


def _strategy_layout(strategy: ShiftStrategy) -> tuple[tuple[str, ...], tuple[float, ...]]:
    shifts = strategy.labels()
    return tuple(shifts), tuple(shifts.values())


def simulate_block(cfg: SessionConfig, pair: DetectorPair, strategy: ShiftStrategy,
                   n: int, rng: np.random.Generator) -> PulseBatch:
    labels, shifts = _strategy_layout(strategy)
    x = rng.integers(0, 2, n, dtype=np.int8)
    z2 = rng.integers(0, 2, n, dtype=np.int8)
    bob_basis = rng.integers(0, 2, n, dtype=np.int8)
    photons = rng.poisson(cfg.mean_photon_number, n)
    arrived = rng.binomial(photons, cfg.channel_transmittance)
    eve = strategy.choose_many(rng, n)

    matched = z2 == bob_basis
    flip = (rng.random(n) < cfg.intrinsic_flip_prob).astype(np.int8)
    random_port = rng.integers(0, 2, n, dtype=np.int8)
    target = np.where(matched, x ^ flip, random_port)

    eff = np.array([pair.efficiencies(s) for s in shifts], dtype=float)  # [label, detector]
    detected = rng.binomial(arrived, eff[eve, target])
    signal = detected > 0
    dark = pair.dark_count_prob
    click0 = (signal & (target == 0)) | (rng.random(n) < dark)
    click1 = (signal & (target == 1)) | (rng.random(n) < dark)
    y = squash_many(click0, click1, rng)
    return PulseBatch(x, z2, eve, bob_basis, click0, click1, y, labels, shifts)


def sift(batch: PulseBatch | Iterable[PulseRecord], shifts: Mapping[str, float] | None = None) -> SiftedTable:
    """Basis-matched contingency table; accepts a batch or an iterable of records
    (records need ``shifts`` to name the labels)."""
    if not isinstance(batch, PulseBatch):
        if shifts is None:
            raise ConfigError("sifting records needs the label -> shift mapping")
        batch = PulseBatch.from_records(batch, shifts)
    n_labels = len(batch.labels)
    matched = batch.alice_basis == batch.bob_basis
    keep = matched & (batch.bob_bit != NO_BIT)
    idx = (batch.eve_shift[keep].astype(np.int64) * 8 + batch.alice_basis[keep] * 4
           + batch.alice_bit[keep] * 2 + batch.bob_bit[keep])
    counts = np.bincount(idx, minlength=8 * n_labels).reshape(n_labels, 2, 2, 2)
    sent = np.bincount(batch.eve_shift.astype(np.int64), minlength=n_labels)
    sifted = np.bincount(batch.eve_shift[matched].astype(np.int64), minlength=n_labels)
    return SiftedTable(
        {k: counts[i].astype(np.int64) for i, k in enumerate(batch.labels)},
        dict(zip(batch.labels, batch.shifts)),
        {k: int(sent[i]) for i, k in enumerate(batch.labels)},
        {k: int(sifted[i]) for i, k in enumerate(batch.labels)},
        len(batch), int(matched.sum()),
    )


def count_summaries(batch: PulseBatch) -> dict[str, CountSummary]:
    out = {}
    for i, (k, s) in enumerate(zip(batch.labels, batch.shifts)):
        y = batch.bob_bit[batch.eve_shift == i]
        out[k] = CountSummary(int((y == 0).sum()), int((y == 1).sum()), len(y), s)
    return out


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))


def run_session(cfg: SessionConfig, pair: DetectorPair, strategy: ShiftStrategy,
                workers: int = 1, block_size: int = BLOCK_SIZE) -> SessionResult:
    """Simulate ``cfg.n_pulses`` pulses and accumulate the sifted table and
    per-shift decoded-bit counts. Deterministic in ``cfg.seed``."""
    n_blocks = -(-cfg.n_pulses // block_size)

    def one(k: int):
        n = min(block_size, cfg.n_pulses - k * block_size)
        batch = simulate_block(cfg, pair, strategy, n, block_rng(cfg.seed, k))
        return sift(batch), count_summaries(batch)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(one, range(n_blocks)))
    else:
        parts = [one(k) for k in range(n_blocks)]

    table, summaries = parts[0]
    for t, s in parts[1:]:
        table = table + t
        summaries = {k: summaries[k] + s[k] for k in summaries}
    return SessionResult(table, summaries)


def expected_session(cfg: SessionConfig, pair: DetectorPair, strategy: ShiftStrategy) -> SessionResult:
    """Noise-free expectation of :func:`run_session` (float counts)."""
    labels, shifts = _strategy_layout(strategy)
    weights = strategy.weights()
    e, dark = cfg.intrinsic_flip_prob, pair.dark_count_prob
    cells, sent, sifted, summaries = {}, {}, {}, {}
    for k, s in zip(labels, shifts):
        n_k = cfg.n_pulses * weights[k]
        eta = pair.efficiencies(s)
        routed = []  # routed[r][y] = P(Y = y | pulse routed to detector r)
        for r in (0, 1):
            same, other = routed_outcomes(-np.expm1(-cfg.mean_arriving * eta[r]), dark)
            routed.append([float(same), float(other)] if r == 0 else [float(other), float(same)])
        c = np.zeros((2, 2, 2))
        for x in (0, 1):
            for y in (0, 1):
                c[:, x, y] = n_k / 8 * ((1 - e) * routed[x][y] + e * routed[1 - x][y])
        cells[k] = c
        sent[k] = n_k
        sifted[k] = n_k / 2
        d = [n_k * 0.5 * (routed[0][y] + routed[1][y]) for y in (0, 1)]
        summaries[k] = CountSummary(d[0], d[1], n_k, s)
    table = SiftedTable(cells, dict(zip(labels, shifts)), sent, sifted, cfg.n_pulses, cfg.n_pulses / 2)
    return SessionResult(table, summaries)


def combine_constant_runs(results: Mapping[str, SessionResult]) -> SessionResult:
    """View separate constant-shift sessions of equal size as one per-shift table.

    The combined table keeps each run's per-shift counts; its totals are those
    of a single run (mean sifted count).
    """
    tables = [r.table for r in results.values()]
    budgets = {t.n_sent for t in tables}
    if len(budgets) != 1:
        raise ConfigError("constant-shift runs must share the same pulse budget")
    cells, shifts, sent, sifted, summaries = {}, {}, {}, {}, {}
    for label, r in results.items():
        (k, c), = r.table.cells.items()
        cells[label] = c
        shifts[label] = r.table.shifts[k]
        sent[label] = r.table.sent[k]
        sifted[label] = r.table.sifted[k]
        summaries[label] = r.summaries[k]
    n_sifted = round(sum(t.n_sifted_basis for t in tables) / len(tables))
    return SessionResult(SiftedTable(cells, shifts, sent, sifted, budgets.pop(), n_sifted), summaries)


def qber(table: SiftedTable, label: str) -> float:
    tot = table.total(label)
    if tot == 0:
        raise ZeroDivisionError(f"no sifted detections at shift {label}")
    return table.errors(label) / tot


class SessionProbe:
    """Probe runner for :func:`timeshift.attack.probe_mismatch`.

    ``probe(shift_ps, n_probe)`` simulates ``n_probe`` pulses at a constant
    shift and returns the decoded-bit counts revealed for them.
    """

    def __init__(self, cfg: SessionConfig, pair: DetectorPair):
        self.cfg = cfg
        self.pair = pair
        self.calls = 0

    def __call__(self, shift_ps: float, n_probe: int) -> tuple[int, int]:
        from dataclasses import replace

        self.calls += 1
        cfg = replace(self.cfg, n_pulses=n_probe, seed=(self.cfg.seed + 7919 * self.calls) % 2**64)
        res = run_session(cfg, self.pair, ShiftStrategy(shift_a=shift_ps, mode="constant_a"))
        s = res.summaries["A"]
        return int(s.d0), int(s.d1)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) or float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def _num(s: str):
    f = float(s)
    return int(f) if f.is_integer() and "." not in s and "e" not in s.lower() else f


def write_sifted_csv(table: SiftedTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(sifted_csv(table))


def sifted_csv(table: SiftedTable) -> str:
    buf = io.StringIO()
    for note in table.notes:
        buf.write(f"# {note}\n")
    buf.write(f"# n_sent={_fmt(table.n_sent)} n_sifted_basis={_fmt(table.n_sifted_basis)}\n")
    for k in table.labels:
        buf.write(f"# label={k} shift_ps={table.shifts[k]!r} sent={_fmt(table.sent[k])} sifted={_fmt(table.sifted[k])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shift", "z2", "x", "y", "count"])
    for k in table.labels:
        c = table.cells[k]
        for z2 in (0, 1):
            for x in (0, 1):
                for y in (0, 1):
                    w.writerow([k, z2, x, y, _fmt(c[z2, x, y])])
    return buf.getvalue()


def _meta(line: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)


def read_sifted_csv(path: str | Path) -> SiftedTable:
    text = Path(path).read_text()
    notes, shifts, sent, sifted, totals = [], {}, {}, {}, {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            meta = _meta(line)
            if "label" in meta:
                k = meta["label"]
                shifts[k] = float(meta["shift_ps"])
                sent[k] = _num(meta["sent"])
                sifted[k] = _num(meta["sifted"])
            elif "n_sent" in meta:
                totals = meta
            else:
                notes.append(line[1:].strip())
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    counts = [_num(r["count"]) for r in rows]
    integral = all(isinstance(c, int) for c in counts)
    cells = {k: np.zeros((2, 2, 2), dtype=np.int64 if integral else float) for k in shifts}
    for r, c in zip(rows, counts):
        cells[r["shift"]][int(r["z2"]), int(r["x"]), int(r["y"])] = c
    return SiftedTable(cells, shifts, sent, sifted, _num(totals["n_sent"]), _num(totals["n_sifted_basis"]), notes)


def count_csv(summaries: Mapping[str, CountSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shift", "d0", "d1", "n"])
    for s in summaries.values():
        w.writerow([repr(float(s.shift)), _fmt(s.d0), _fmt(s.d1), _fmt(s.n_sent)])
    return buf.getvalue()


def write_count_csv(summaries: Mapping[str, CountSummary], path: str | Path) -> None:
    Path(path).write_text(count_csv(summaries))


def read_count_csv(path: str | Path) -> list[CountSummary]:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip() and not l.startswith("#")]
    return [CountSummary(_num(r["d0"]), _num(r["d1"]), _num(r["n"]), float(r["shift"]))
            for r in csv.DictReader(lines)]
