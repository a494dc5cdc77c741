import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpl.photon_stats import StateModel, apply_loss, surrogate, to_state_model
from qpl.qng import (
    bisect_predicate,
    loss_trajectory,
    nsr_threshold,
    qng_criterion,
    qng_depth_loss,
    thermal_trajectory,
)

REF_P2 = 8.8e-5
# P1 recovered from the closed form eta_min = 3 P2 / (2 P1^3) at 43.4 % loss
REF_P1 = (1.5 * REF_P2 / (1 - 0.434)) ** (1 / 3)


def test_derived_p1():
    assert REF_P1 == pytest.approx(0.0616, abs=5e-5)


def test_criterion_examples():
    v = qng_criterion(StateModel.from_p1_p2(0.1, 0.0))
    assert v.is_qng and v.margin == pytest.approx(6.667e-4, rel=1e-3)
    v = qng_criterion(StateModel.from_p1_p2(0.1, 2 / 3 * 0.1**3))
    assert not v.is_qng
    v = qng_criterion(StateModel.from_p1_p2(0.0616, 8.8e-5))
    assert v.is_qng
    assert v.margin == pytest.approx(2 / 3 * 0.0616**3 - 8.8e-5, rel=1e-12)
    assert v.margin == pytest.approx(6.8e-5, abs=1e-6)


def test_criterion_error_propagation():
    v = qng_criterion(StateModel.from_p1_p2(0.06, 8e-5, sigma_p1=1e-3, sigma_p2plus=2e-6))
    assert v.sigma_margin == pytest.approx(math.hypot(2 * 0.06**2 * 1e-3, 2e-6))


def test_depth_reference_point():
    d = qng_depth_loss(StateModel.from_p1_p2(0.0616, REF_P2))
    assert d.depth == pytest.approx(0.434, abs=0.010)
    assert abs(d.depth - d.closed_form_depth) < 5e-3
    assert d.bracket.value_lo <= 0 < d.bracket.value_hi
    assert d.worst_case_depth < d.depth


def test_depth_no_multiphoton():
    assert qng_depth_loss(StateModel.from_p1_p2(0.05, 0.0)).depth == 1.0


def test_depth_non_qng_is_zero():
    assert qng_depth_loss(StateModel.from_p1_p2(0.05, 1e-3)).depth == 0.0


def test_depth_bisection_vs_closed_form():
    # the closed form drops the 2 eta (1 - eta) P2 cross term, an O(P2/P1) effect
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 100:
        p1 = rng.uniform(0.02, 0.5)
        p2 = rng.uniform(0, 1e-3)
        s = StateModel.from_p1_p2(p1, p2)
        if not qng_criterion(s).is_qng:
            continue
        d = qng_depth_loss(s, worst_case=False)
        gap = abs(d.depth - d.closed_form_depth)
        assert gap <= 2 * p2 / p1
        if p2 / p1 <= 2e-3:
            assert gap < 5e-3
        checked += 1


def test_depth_monotone_grid():
    p1s = np.linspace(0.05, 0.3, 20)
    p2s = np.linspace(1e-6, 8e-5, 20)
    depth = np.array([[qng_depth_loss(StateModel.from_p1_p2(a, b), worst_case=False).depth for b in p2s] for a in p1s])
    assert np.all(np.diff(depth, axis=1) <= 1e-6)  # antitone in P2+
    assert np.all(np.diff(depth, axis=0) >= -1e-6)  # isotone in P1


def test_loss_trajectory_matches_binomial():
    s = StateModel.from_p1_p2(0.06, 5e-5)
    pts = loss_trajectory(s, [1.0, 0.5])
    assert pts[0].p1 == pytest.approx(0.06) and pts[0].p2plus == pytest.approx(5e-5)
    assert pts[1].p2plus == pytest.approx(0.25 * 5e-5, rel=1e-12)


def test_thermal_trajectory_vacuum_noise_is_loss():
    s = StateModel.from_p1_p2(0.06, 8.8e-5)
    p = thermal_trajectory(s, [0.0], t=0.9)[0]
    ref = to_state_model(apply_loss(surrogate(s), 0.9))
    assert p.p1 == ref.p1 and p.p2plus == ref.p2plus


def test_thermal_trajectory_identity():
    s = StateModel.from_p1_p2(0.06, 8.8e-5)
    p = thermal_trajectory(s, [0.0], t=1.0)[0]
    assert p.p1 == pytest.approx(s.p1, abs=1e-12)
    assert p.p2plus == pytest.approx(s.p2plus, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.0, 1e-3))
def test_thermal_trajectory_monotone(p1, p2):
    s = StateModel.from_p1_p2(p1, p2)
    pts = thermal_trajectory(s, np.linspace(0, 0.05, 12), t=0.9)
    p2s = [p.p2plus for p in pts]
    margins = [p.margin for p in pts]
    assert np.all(np.diff(p2s) > 0)
    assert np.all(np.diff(margins) < 0)


def test_nsr_reference_point_in_band():
    thr = nsr_threshold(StateModel.from_p1_p2(0.0616, 8.8e-5), t=0.9)
    assert 0.003 <= thr.nsr <= 0.03
    b = thr.bracket
    assert b.value_lo <= 0 < b.value_hi  # margin flips sign across the bracket


def test_nsr_exists_without_multiphotons():
    thr = nsr_threshold(StateModel.from_p1_p2(0.1, 0.0))
    assert 0 < thr.nsr < math.inf


def test_nsr_monotonicity():
    p2s = np.linspace(0, 3e-4, 8)
    thr = [nsr_threshold(StateModel.from_p1_p2(0.1, p2)).nsr for p2 in p2s]
    assert np.all(np.diff(thr) < 0)
    for p1 in (0.05, 0.08, 0.12):
        a = nsr_threshold(StateModel.from_p1_p2(p1, 5e-5)).nsr
        b = nsr_threshold(StateModel.from_p1_p2(2 * p1, 5e-5)).nsr
        assert b > a


def test_nsr_conventions_differ_by_reflectivity():
    s = StateModel.from_p1_p2(0.0616, 8.8e-5)
    post = nsr_threshold(s, convention="post").nsr
    pre = nsr_threshold(s, convention="pre").nsr
    assert pre == pytest.approx(post / 0.1)


def test_nsr_rejects_non_qng():
    with pytest.raises(ValueError):
        nsr_threshold(StateModel.from_p1_p2(0.05, 1e-3))


def test_bisect_requires_sign_change():
    with pytest.raises(ValueError):
        bisect_predicate(lambda x: 1.0, 0.0, 1.0)
    br = bisect_predicate(lambda x: x - 0.3, 0.0, 1.0)
    assert br.lo <= 0.3 < br.hi and br.hi - br.lo <= 1e-6


def test_verdict_scale_invariant():
    # counts scaled by a constant give the same probabilities and verdict
    for scale in (1, 10, 1000):
        n, n1, n2 = 1e5 * scale, 6100 * scale, 8 * scale
        assert qng_criterion(StateModel.from_p1_p2(n1 / n, n2 / n)).is_qng
