import math

import numpy as np
import pytest

from unicsim import (
    DetectorConfig,
    SourceConfig,
    expected_afterpulses,
    expected_click_prob,
    pulse_ratio,
    simulate,
)
from unicsim.apd import KIND_AFTERPULSE, KIND_DARK, KIND_PHOTON, read_events_csv, write_events_csv

TRAP_DET = dict(traps_per_avalanche=2.0, detrap_tau=2e-9, p_trigger=0.1,
                f_g=1.25e9, gate_width=1.5e-10)


# ---------------------------------------------------------------------------
# Closed-form oracles
# ---------------------------------------------------------------------------

def test_expected_afterpulses_matches_numeric_summation():
    det = DetectorConfig(**TRAP_DET)
    # independent oracle: literal summation of the per-gate window integrals
    tau = det.detrap_tau
    period = 1.0 / det.f_g
    total = 0.0
    for k in range(1, 10_000):
        total += math.exp(-k * period / tau) - math.exp(-(k * period + det.gate_width) / tau)
    expected = det.traps_per_avalanche * det.p_trigger * total
    a = expected_afterpulses(det)
    assert a == pytest.approx(expected, rel=1e-12)
    assert a == pytest.approx(0.0293830, abs=5e-7)


def test_expected_afterpulses_limits():
    base = dict(TRAP_DET)
    assert expected_afterpulses(DetectorConfig(**{**base, "detrap_tau": 1e-15})) == 0.0
    assert expected_afterpulses(DetectorConfig(**{**base, "p_trigger": 0.0})) == 0.0
    assert expected_afterpulses(DetectorConfig(**{**base, "traps_per_avalanche": 0.0})) == 0.0


def test_expected_click_prob_arithmetic():
    det = DetectorConfig(eta_gate=0.25, dark_per_gate=1e-6, traps_per_avalanche=0.0)
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1)
    p = expected_click_prob(det, src)
    assert p.p_illuminated == pytest.approx(1.0 - (1.0 - 1e-6) * math.exp(-0.025), rel=1e-12)
    assert p.p_illuminated == pytest.approx(0.0246911, abs=5e-7)
    assert p.p_non_illuminated == 1e-6


def test_expected_click_prob_trivial_cases():
    det = DetectorConfig(eta_gate=0.25, dark_per_gate=1e-4, traps_per_avalanche=0.0)
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.0)
    p = expected_click_prob(det, src)
    assert p.p_illuminated == pytest.approx(1e-4, rel=1e-12)

    det0 = DetectorConfig(eta_gate=0.25, dark_per_gate=0.0, traps_per_avalanche=0.0)
    p0 = expected_click_prob(det0, SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1))
    assert p0.p_non_illuminated == 0.0


def test_expected_click_prob_includes_afterpulse_correction():
    det = DetectorConfig(eta_gate=0.25, dark_per_gate=1e-6, **{k: v for k, v in TRAP_DET.items()
                                                               if k not in ("f_g", "gate_width")})
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1)
    p = expected_click_prob(det, src)
    a = expected_afterpulses(det)
    base = 1.0 - (1.0 - 1e-6) * math.exp(-0.025)
    rate = (base + 124 * 1e-6) / 125
    assert p.p_illuminated == pytest.approx(base + a * rate, rel=1e-12)
    assert p.p_non_illuminated == pytest.approx(1e-6 + a * rate, rel=1e-12)


# ---------------------------------------------------------------------------
# Simulation statistics
# ---------------------------------------------------------------------------

def test_simulate_empty_when_all_sources_off():
    det = DetectorConfig(eta_gate=0.0, dark_per_gate=0.0, traps_per_avalanche=0.0)
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1)
    assert len(simulate(det, src, 100_000, seed=1)) == 0


def test_simulate_illuminated_click_fraction():
    det = DetectorConfig(eta_gate=0.25, dark_per_gate=0.0, traps_per_avalanche=0.0)
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1, illuminated_gate_phase=5)
    n_gates = 10_000_000
    s = simulate(det, src, n_gates, seed=11)
    n_ill = len(range(5, n_gates, 125))
    p = 1.0 - math.exp(-0.025)
    sigma = math.sqrt(p * (1 - p) / n_ill)
    assert s.counts()["photon"] / n_ill == pytest.approx(p, abs=3 * sigma)


def test_simulate_afterpulses_match_oracle_within_3_sigma():
    # dark-driven gates give >= 1e6 avalanches quickly; the rate is kept low
    # so gate-collision suppression stays far below the statistical bound
    det = DetectorConfig(eta_gate=0.0, dark_per_gate=0.002, jitter_sigma=0.0, **TRAP_DET)
    src = SourceConfig(mode="cw_carved", laser_rate=1.25e9, mu=0.0)
    s = simulate(det, src, 500_000_000, seed=99)
    c = s.counts()
    n_primary = c["photon"] + c["dark"]
    assert n_primary >= 1_000_000
    a_mc = c["afterpulse"] / n_primary
    a = expected_afterpulses(det)
    assert a <= 0.1
    sigma = math.sqrt(c["afterpulse"]) / n_primary
    assert a_mc == pytest.approx(a, abs=3 * sigma)


def test_simulate_labels_and_windows():
    det = DetectorConfig(eta_gate=0.5, dark_per_gate=1e-4, jitter_sigma=5e-11, **{
        k: v for k, v in TRAP_DET.items() if k not in ("f_g", "gate_width")})
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.5, illuminated_gate_phase=3)
    n_gates = 2_000_000
    s = simulate(det, src, n_gates, seed=5)
    assert set(np.unique(s.kind)) <= {KIND_PHOTON, KIND_DARK, KIND_AFTERPULSE}
    # photons occur only on illuminated gates
    photon_gates = s.gate_index[s.kind == KIND_PHOTON]
    assert np.all(photon_gates % 125 == 3)
    # at most one event per gate, nondecreasing order
    assert np.all(np.diff(s.gate_index) >= 1)
    # times stay inside the gate window around the gate center
    period = 1.0 / det.f_g
    offsets = s.time - s.gate_index * period
    assert np.all(np.abs(offsets) <= det.gate_width / 2 + 1e-15)
    assert np.all(s.gate_index < n_gates)


def test_simulate_charge_statistics():
    det = DetectorConfig(eta_gate=1.0, dark_per_gate=0.0, traps_per_avalanche=0.0,
                         mean_charge=3.8e-14, charge_cv=0.3)
    src = SourceConfig(mode="cw_carved", laser_rate=1.25e9, mu=5.0)
    s = simulate(det, src, 300_000, seed=21)
    n = len(s)
    assert np.all(s.charge > 0)
    sigma = 0.3 * 3.8e-14 / math.sqrt(n)
    assert np.mean(s.charge) == pytest.approx(3.8e-14, abs=3 * sigma)


def test_simulate_seed_determinism():
    det = DetectorConfig(eta_gate=0.3, dark_per_gate=1e-5, **{
        k: v for k, v in TRAP_DET.items() if k not in ("f_g", "gate_width")})
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.2, illuminated_gate_phase=1)
    a = simulate(det, src, 3_000_000, seed=1234)
    b = simulate(det, src, 3_000_000, seed=1234)
    for name in ("gate_index", "time", "kind", "charge"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = simulate(det, src, 3_000_000, seed=1235)
    assert c.gate_index.tobytes() != a.gate_index.tobytes()


def test_simulate_trap_toggle_preserves_primaries():
    base = dict(eta_gate=0.3, dark_per_gate=1e-4, detrap_tau=2e-9, p_trigger=0.1)
    det_off = DetectorConfig(traps_per_avalanche=0.0, **base)
    det_on = DetectorConfig(traps_per_avalanche=2.0, **base)
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.5, illuminated_gate_phase=0)
    s_off = simulate(det_off, src, 2_000_000, seed=77)
    s_on = simulate(det_on, src, 2_000_000, seed=77)
    assert len(s_on) >= len(s_off)
    primaries_on = s_on.gate_index[s_on.kind != KIND_AFTERPULSE]
    assert np.array_equal(primaries_on, s_off.gate_index)


def test_simulate_cascades_add_events():
    det = DetectorConfig(eta_gate=0.0, dark_per_gate=0.01, jitter_sigma=0.0, **{
        **TRAP_DET, "traps_per_avalanche": 4.0})
    src = SourceConfig(mode="cw_carved", laser_rate=1.25e9, mu=0.0)
    first_gen = simulate(det, src, 1_000_000, seed=3)
    cascaded = simulate(det, src, 1_000_000, seed=3, allow_afterpulse_cascades=True)
    assert cascaded.counts()["afterpulse"] > first_gen.counts()["afterpulse"]
    assert np.array_equal(
        first_gen.gate_index[first_gen.kind != KIND_AFTERPULSE],
        cascaded.gate_index[cascaded.kind != KIND_AFTERPULSE],
    )


def test_pulse_ratio_validation():
    det = DetectorConfig()
    assert pulse_ratio(det, SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1)) == 125
    assert pulse_ratio(det, SourceConfig(mode="cw_carved", laser_rate=1.25e9, mu=0.1)) == 1
    with pytest.raises(ValueError, match="divide"):
        pulse_ratio(det, SourceConfig(mode="pulsed", laser_rate=3e7, mu=0.1))
    with pytest.raises(ValueError, match="phase"):
        pulse_ratio(det, SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.1,
                                      illuminated_gate_phase=125))


def test_config_validation():
    with pytest.raises(ValueError, match="eta_gate"):
        DetectorConfig(eta_gate=1.5)
    with pytest.raises(ValueError, match="gate_width"):
        DetectorConfig(gate_width=1e-9)
    with pytest.raises(ValueError, match="mean_charge"):
        DetectorConfig(mean_charge=0.0)
    with pytest.raises(ValueError, match="mode"):
        SourceConfig(mode="chopped")
    with pytest.raises(ValueError):
        simulate(DetectorConfig(), SourceConfig(), 0, seed=1)


def test_events_csv_roundtrip(tmp_path):
    det = DetectorConfig(eta_gate=0.3, dark_per_gate=1e-4, **{
        k: v for k, v in TRAP_DET.items() if k not in ("f_g", "gate_width")})
    src = SourceConfig(mode="pulsed", laser_rate=1e7, mu=0.5)
    s = simulate(det, src, 500_000, seed=8)
    path = tmp_path / "events.csv"
    write_events_csv(path, s)
    back = read_events_csv(path)
    assert np.array_equal(back.gate_index, s.gate_index)
    assert np.array_equal(back.time, s.time)
    assert np.array_equal(back.kind, s.kind)
    assert np.array_equal(back.charge, s.charge)
