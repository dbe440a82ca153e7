import json
import math
from dataclasses import replace

import numpy as np
import pytest

from timeshift.cli import main
from timeshift.detector import CalibrationModel, DetectorPair, GateProfile
from timeshift.errors import ConfigError, FixtureMissingError
from timeshift.harness import (
    DetectorSpec,
    Scenario,
    calibration_stats,
    dark_prob_from_yield,
    load_reference_fixtures,
    load_scenario,
    read_sweep_csv,
    reproduce_paper,
    run_sweep,
    sweep_csv,
)
from timeshift.protocol import SessionConfig, SessionResult, SiftedTable, write_count_csv, write_sifted_csv


def write_ini(path, text):
    path.write_text(text)
    return path


def test_default_scenario_matches_bundled_file():
    sc = load_scenario()
    assert sc.session == SessionConfig()
    assert sc.strategy == "balanced"
    assert sc.sweep == (-250.0, 500.0)
    assert sc.calibration.deviation_prob == pytest.approx(106 / 2844)


def test_overrides_win(tmp_path):
    sc = load_scenario(seed=7, out=tmp_path, pulses=1000, workers=2)
    assert sc.session.seed == 7 and sc.session.n_pulses == 1000
    assert sc.output_dir == tmp_path and sc.workers == 2


def test_explicit_strategy_and_relative_paths(tmp_path):
    p = write_ini(tmp_path / "s.ini", "[strategy]\nmode = mixture\nshift_a_ps = -100\nshift_b_ps = 300\np_a = 0.4\n"
                  "[sweep]\nshifts_ps = -100 0 300\n[output]\ndir = res\n")
    sc = load_scenario(p)
    assert sc.strategy.p_a == 0.4 and sc.strategy.shift_b == 300.0
    assert sc.sweep == (-100.0, 0.0, 300.0)
    assert sc.output_dir == tmp_path / "res"


@pytest.mark.parametrize("text", ["[sweep]\nshifts_ps = 25\n", "[strategy]\nmode = greedy\n",
                                  "[session]\nmean_photon_number = -1\n"])
def test_bad_scenarios(tmp_path, text):
    with pytest.raises(ConfigError):
        load_scenario(write_ini(tmp_path / "bad.ini", text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.ini")


def test_dark_probability_gives_pair_yield():
    d = dark_prob_from_yield(2.26e-5)
    assert 1 - (1 - d) ** 2 == pytest.approx(2.26e-5, rel=1e-12)


def test_profile_and_curve_detector_models(tmp_path):
    from timeshift.detector import sample_profile, write_curve_csv
    g0, g1 = GateProfile(0.1, 0.0, 500, 100), GateProfile(0.08, 100.0, 500, 100)
    spec = DetectorSpec(model="profiles", pulse_fwhm=0.0, centers=(0.0, 100.0), peaks=(0.1, 0.08))
    pair = spec.build(SessionConfig())
    assert pair.d0 == g0 and pair.d1 == g1
    write_curve_csv(sample_profile(g0, 10.0), tmp_path / "c0.csv")
    write_curve_csv(sample_profile(g1, 10.0), tmp_path / "c1.csv")
    cpair = DetectorSpec(model="curves", pulse_fwhm=0.0, curves=("c0.csv", "c1.csv"), base_dir=tmp_path).build(
        SessionConfig())
    np.testing.assert_allclose(cpair.efficiencies(np.array([-200.0, 0.0, 150.0])),
                               pair.efficiencies(np.array([-200.0, 0.0, 150.0])), atol=1e-3)
    with pytest.raises(FixtureMissingError):
        DetectorSpec(model="curves", curves=("x.csv", "y.csv"), base_dir=tmp_path).build(SessionConfig())
    with pytest.raises(ConfigError):
        DetectorSpec(model="spline").build(SessionConfig())


def test_empty_sweep_gives_header_only():
    rows = run_sweep(Scenario(sweep=()), DetectorPair(GateProfile(0.1), GateProfile(0.1), 1e-5))
    assert rows == []
    assert sweep_csv(rows) == "shift_ps,d0,d1,n,qber,mismatch\n"


def test_sweep_identical_detectors_has_unit_mismatch():
    g = GateProfile(0.1, 0.0, 500, 100)
    sc = Scenario(session=replace(SessionConfig(), n_pulses=2_000_000), sweep=(0.0,))
    (row,) = run_sweep(sc, DetectorPair(g, g, 1.13e-5))
    sigma = row.mismatch * math.sqrt(1 / row.d0 + 1 / row.d1)
    assert abs(row.mismatch - 1.0) <= 3 * sigma


def test_sweep_sorted_roundtrip_and_parallel(ref_pair):
    sc = Scenario(session=replace(SessionConfig(), n_pulses=300_000), sweep=(500.0, -250.0, 0.0))
    rows = run_sweep(sc, ref_pair)
    assert [r.shift for r in rows] == [-250.0, 0.0, 500.0]
    assert read_sweep_csv(sweep_csv(rows)) == rows
    assert sweep_csv(run_sweep(replace(sc, workers=3), ref_pair)) == sweep_csv(rows)


def test_reproduction_uses_no_randomness(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("random generator used")

    monkeypatch.setattr(np.random, "default_rng", boom)
    monkeypatch.setattr(np.random, "SeedSequence", boom)
    monkeypatch.setattr(np.random, "Generator", boom)
    rep = reproduce_paper()
    assert rep.passed and rep.breach
    assert "PASS" in rep.text() and "FAIL" not in rep.text()


def test_reproduce_with_swapped_labels(tmp_path, fixtures):
    write_sifted_csv(fixtures.table.relabeled({"A": "B", "B": "A"}), tmp_path / "sifted_cells.csv")
    write_count_csv(fixtures.summaries, tmp_path / "shift_counts.csv")
    swapped = reproduce_paper(load_reference_fixtures(tmp_path))
    orig = reproduce_paper(fixtures)
    assert swapped.p_a == pytest.approx(1 - orig.p_a, abs=1e-15)
    assert swapped.analysis.report.k_upper == pytest.approx(orig.analysis.report.k_upper, rel=1e-13)


def test_balanced_cells_do_not_breach(fixtures):
    t = fixtures.table
    same = np.array([[[1200, 70], [70, 1200]], [[1200, 70], [70, 1200]]])
    flat = SiftedTable({"A": same.copy(), "B": same.copy()}, t.shifts, t.sent, t.sifted, t.n_sent,
                       t.n_sifted_basis)
    rep = reproduce_paper(SessionResult(flat, fixtures.summaries))
    assert not rep.breach
    assert rep.analysis.report.k_upper > rep.analysis.report.k_lower


def test_missing_fixture(tmp_path):
    with pytest.raises(FixtureMissingError):
        load_reference_fixtures(tmp_path)


@pytest.mark.parametrize("prob,want", [(0.0, 0), (1.0, 500)])
def test_calibration_stats_extremes(prob, want):
    st = calibration_stats(CalibrationModel(deviation_prob=prob), 500, np.random.default_rng(3))
    assert st.n_maximal == want
    assert st.ci_low <= st.frequency <= st.ci_high


def test_calibration_stats_rejects_zero_runs():
    with pytest.raises(ConfigError):
        calibration_stats(CalibrationModel(), 0, np.random.default_rng(0))


def test_cli_reproduce(tmp_path, capsys):
    assert main(["reproduce-paper", "--out", str(tmp_path)]) == 0
    assert "K_U" in capsys.readouterr().out
    assert (tmp_path / "bounds_table.txt").exists()
    assert (tmp_path / "bounds.csv").read_text().startswith("r_ec,k_lower,k_upper,breach\n")


def test_cli_bounds_defaults_match_reproduction(tmp_path):
    assert main(["bounds", "--out", str(tmp_path)]) == 0
    from timeshift.bounds import BoundsReport
    r = BoundsReport.from_csv((tmp_path / "bounds.csv").read_text())
    assert r.k_upper == pytest.approx(1130.95, abs=0.01) and r.breach


def test_cli_error_lines(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "missing.ini")]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"
    assert main(["reproduce-paper", "--out", str(tmp_path), "--data-dir", str(tmp_path)]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "FixtureMissingError"


def test_cli_calibrate(tmp_path, capsys):
    assert main(["calibrate-stats", "--out", str(tmp_path), "--runs", "2844"]) == 0
    assert "maximal deviations" in capsys.readouterr().out
    assert (tmp_path / "calibration.csv").read_text().startswith("n_runs,")


@pytest.mark.parametrize("cmd", ["sweep", "attack"])
def test_cli_byte_identical_outputs(tmp_path, cmd):
    outs = []
    for run in ("one", "two"):
        d = tmp_path / run
        assert main([cmd, "--pulses", "400000", "--seed", "99", "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    assert len(outs[0]) >= 1
