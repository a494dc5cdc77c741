import math

import numpy as np
import pytest

from qpl.detector import DetectorParams, detect
from qpl.engine import coincidence_rate, cross_correlate, merge_streams
from qpl.presets import REFERENCE_WINDOW, reference_detectors, reference_source, reverse_source
from qpl.source import (
    ANTI_STOKES,
    STOKES,
    EventSet,
    SourceParams,
    antistokes_transmission,
    antistokes_transmission_quad,
    effective_rates,
    generate_events,
    generate_tmsv_pulses,
    geometry_overlap,
    laplace_window_mass,
    thermal_arrivals,
)


def test_geometry_overlap_examples():
    assert geometry_overlap(-37.5e-3, 1e-3, 75e-3) == pytest.approx(1.0, abs=1e-6)
    s = 18e-3 / 2.355
    assert geometry_overlap(4 * 3 * s, 18e-3, 75e-3) == pytest.approx(0.0, abs=1e-6)
    assert geometry_overlap(0.0, 18e-3, 10.0) == pytest.approx(0.5, abs=1e-12)


def test_antistokes_transmission_examples():
    assert antistokes_transmission(-20e-3, 18e-3, 0.0, 75e-3) == 1.0
    assert antistokes_transmission(-10e-3, 1e-9, 50.0, 75e-3) == pytest.approx(math.exp(-0.5), rel=1e-6)


def test_antistokes_transmission_quadrature_and_monotone():
    ds = np.linspace(-60e-3, -2e-3, 10)
    vals = [antistokes_transmission(d, 18e-3, 30.0, 75e-3) for d in ds]
    for d, v in zip(ds, vals):
        assert v == pytest.approx(antistokes_transmission_quad(d, 18e-3, 30.0, 75e-3), rel=1e-8)
    assert np.all(np.diff(vals) > 0)  # decreasing in |d|


def test_params_validation():
    with pytest.raises(ValueError):
        SourceParams(pair_rate=-1)
    with pytest.raises(ValueError):
        SourceParams(eta_opt_s=1.5)
    with pytest.raises(ValueError):
        SourceParams(noise_kind="thermal")
    with pytest.raises(ValueError):
        SourceParams.from_dict({"pair_rate": 1.0, "bogus": 2})


def test_noise_only_counts_are_poisson():
    rate, dur = 2e4, 0.01
    p = SourceParams(noise_rate_s=rate)
    counts = np.array([np.count_nonzero(generate_events(p, dur, s).field == STOKES) for s in range(100)])
    mu = rate * dur
    assert np.all(np.abs(counts - mu) < 3 * math.sqrt(mu) * 1.5)
    assert abs(counts.mean() - mu) < 3 * math.sqrt(mu / 100)


def test_noiseless_lossless_every_stokes_has_partner():
    p = SourceParams(pair_rate=1e5, d=-37.5e-3, interaction_fwhm=1e-3)
    ev = generate_events(p, 0.02, 3)
    s_ids = ev.pair_id[ev.field == STOKES]
    as_ids = ev.pair_id[ev.field == ANTI_STOKES]
    assert np.all(s_ids >= 0)
    # members crossing the run boundary are dropped; all others are matched
    assert np.isin(s_ids, as_ids).mean() > 0.999
    ev_list = list(ev.select(np.arange(len(ev)) < 3))
    assert ev_list[0].pair_id is not None and ev_list[0].origin_depth <= 0


def test_fixed_seed_identical_and_thread_independent(tmp_path):
    p = reference_source()
    a = generate_events(p, 0.12, 9)
    b = generate_events(p, 0.12, 9, threads=3)
    assert a == b
    a.save(tmp_path / "e.npz")
    assert EventSet.load(tmp_path / "e.npz") == a
    assert generate_events(p, 0.12, 10) != a


def test_events_sorted_and_in_range():
    ev = generate_events(reference_source(), 0.06, 1)
    assert np.all(np.diff(ev.time) >= 0)
    assert ev.time.min() >= 0 and ev.time.max() < 0.06


def test_laplace_window_mass():
    assert laplace_window_mass(1e-9, 1e-9) == pytest.approx(1 - math.exp(-1))
    assert laplace_window_mass(1e-9, 1e-9, 1e-15) == pytest.approx(1 - math.exp(-1), rel=1e-6)
    assert laplace_window_mass(1e-9, 1e-9, 0.5e-9) < 1 - math.exp(-1)


def test_noiseless_coincidences_match_prediction():
    p = SourceParams(pair_rate=2e5, d=-37.5e-3, eta_opt_s=0.6, eta_opt_as=0.5, absorption_coeff=0.0)
    dur = 0.5
    tags = detect(generate_events(p, dur, 5), DetectorParams(), 6)
    s = merge_streams(tags.ticks(0), tags.ticks(1))
    w = 1000  # 81 ns >> tau
    raw, _ = coincidence_rate(tags.ticks(2), s, w, -w // 2, dur)
    pred = effective_rates(p, w * 81e-12)
    expected = pred.coincidence - pred.accidental
    n = raw * dur
    assert abs(n - expected * dur) < 3 * math.sqrt(expected * dur)


def test_rates_converge_to_prediction():
    p, det = reference_source(), reference_detectors()
    dur = 1.0
    tags = detect(generate_events(p, dur, 1), det, 2)
    pred = effective_rates(p, REFERENCE_WINDOW, det)
    m_s = (len(tags.ticks(0)) + len(tags.ticks(1))) / dur
    m_as = len(tags.ticks(2)) / dur
    # dead time makes the closed form approximate at the 0.2 % level
    assert m_s == pytest.approx(pred.m_s, rel=3e-3)
    assert m_as == pytest.approx(pred.m_as, rel=3e-3)


def test_no_pairs_g2_sas_is_one():
    p = SourceParams(noise_rate_s=3e5, noise_rate_as=3e5)
    dur = 1.0
    assert effective_rates(p, 486e-12).g2_sas_zero == 1.0
    tags = detect(generate_events(p, dur, 4), DetectorParams(), 5)
    h = cross_correlate(tags.ticks(2), merge_streams(tags.ticks(0), tags.ticks(1)), 6, 60, duration=dur)
    c = h.counts[h.counts.size // 2]
    assert abs(h.g2()[h.counts.size // 2] - 1) < 3 / math.sqrt(c)


def test_eta_bounded_by_stokes_transmission():
    rng = np.random.default_rng(0)
    for _ in range(30):
        p = SourceParams(
            pair_rate=rng.uniform(0, 2e6),
            noise_rate_s=rng.uniform(0, 1e6),
            noise_rate_as=rng.uniform(0, 1e6),
            eta_opt_s=rng.uniform(0, 1),
            eta_opt_as=rng.uniform(0, 1),
            absorption_coeff=rng.uniform(0, 80),
            d=rng.uniform(-0.08, 0.01),
        )
        r = effective_rates(p, rng.uniform(0.1e-9, 100e-9))
        assert r.eta_2ph <= p.eta_opt_s + 1e-15


def test_coincidences_symmetric_under_reverse():
    p = reference_source().with_(absorption_coeff=0.0)
    q = reverse_source()
    assert effective_rates(p, 5.67e-9).coincidence == pytest.approx(effective_rates(q, 5.67e-9).coincidence, rel=1e-12)


def test_reference_preset_prediction_in_band():
    r = effective_rates(reference_source(), 486e-12, reference_detectors(), eta_window=REFERENCE_WINDOW)
    assert 0.085 <= r.eta_2ph <= 0.095
    assert r.g2_sas_zero >= 40


def test_thermal_arrivals_statistics():
    rng = np.random.default_rng(2)
    tc = 2e-9
    t = thermal_arrivals(rng, 2e8, 0.0, 0.02, tc)
    assert t.size == pytest.approx(4e6, rel=0.02)
    ticks = np.rint(t / 81e-12).astype(np.int64)
    h = cross_correlate(ticks, ticks, 1, 200, duration=0.02)
    g = h.g2()
    mid = g.size // 2
    # zero lag holds self pairs; neighbours carry the chaotic bunching
    assert g[mid + 1] == pytest.approx(1 + math.exp(-2 * 81e-12 / tc), abs=0.05)
    assert g[-20:].mean() == pytest.approx(1.0, abs=0.02)


def test_tmsv_pulses():
    ev = generate_tmsv_pulses(0.1, 1.0, 20000, 1)
    n = ev.meta["photons_per_pulse"]
    assert n.min() >= 1
    assert np.mean(n == 1) == pytest.approx(0.9, abs=0.01)
    assert np.count_nonzero(ev.field == ANTI_STOKES) == 20000
    with pytest.raises(ValueError):
        generate_tmsv_pulses(1.0, 1.0, 10, 1)
