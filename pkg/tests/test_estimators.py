import math

import numpy as np
import pytest

from qpl.engine import HbtCounts
from qpl.estimators import (
    ClickProbabilities,
    EstimatorBiasWarning,
    alpha,
    click_probs,
    estimate_state,
    eta_2ph,
    propagate_sigma,
    repeat_std,
    witness_d,
)
from qpl.photon_stats import apply_loss, hbt_click_probabilities, make_fock, make_poisson, make_thermal


def cp_of(dist):
    c = hbt_click_probabilities(dist)
    return ClickProbabilities.exact(c["r1"], c["r2"], c["rc"])


def test_click_probs_examples():
    cp = click_probs(HbtCounts(100, 50, 50, 0, 10, 0))
    assert (cp.r1, cp.r2, cp.rc, cp.r00) == (0.5, 0.5, 0.0, 0.0)
    cp = click_probs(HbtCounts(4, 3, 3, 2, 10, 0))
    assert cp.r00 == 0.0
    assert cp.sigma_r1 == pytest.approx(math.sqrt(0.75 * 0.25 / 4))


def test_click_probs_rejects_zero_heralds():
    with pytest.raises(ValueError):
        click_probs(HbtCounts(0, 0, 0, 0, 10, 0))


def test_invariants_enforced():
    with pytest.raises(ValueError):
        ClickProbabilities(0.1, 0.1, 0.2, 1.0)
    with pytest.raises(ValueError):
        ClickProbabilities(0.1, 0.1, 0.0, 0.5)


def test_estimate_fock1():
    s = estimate_state(cp_of(make_fock(1)))
    assert (s.p0, s.p1, s.p2plus) == (0.0, 1.0, 0.0)


def test_estimate_fock2_bias_is_documented():
    cp = cp_of(make_fock(2))
    assert (cp.r1, cp.r2, cp.rc) == pytest.approx((0.75, 0.75, 0.5))
    with pytest.warns(EstimatorBiasWarning):
        s = estimate_state(cp)
    assert s.p2plus == pytest.approx(1.0)
    assert s.p1 == pytest.approx(0.0)  # raw 0.5 clipped against P2+ = 1
    assert s.clipped


def test_clipped_p1_carries_p2_error():
    # r1 + r2 - 2 rc + 2 rc > 1: P1 is pinned to 1 - P2+
    s = estimate_state(click_probs(HbtCounts(1000, 530, 530, 60, 70, 0)), warn=False)
    assert s.clipped
    assert s.p1 == pytest.approx(1 - s.p2plus)
    assert s.sigma_p1 == s.sigma_p2plus


def test_unbiased_for_single_photon_support():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p1 = rng.uniform()
        from qpl.photon_stats import PhotonNumberDistribution

        d = apply_loss(PhotonNumberDistribution(np.array([1 - p1, p1])), rng.uniform(0.1, 1))
        s = estimate_state(cp_of(d))
        assert s.p1 == pytest.approx(d[1], abs=1e-15)
        assert s.p2plus == pytest.approx(0.0, abs=1e-15)


def test_alpha_examples():
    assert alpha(cp_of(make_poisson(0.2))) == pytest.approx(1.0, abs=1e-12)
    assert alpha(cp_of(make_fock(1))) == 0.0
    # thermal mean mu split 50:50: each arm is thermal mu/2, both-dark is thermal mu
    mu = 0.01
    r = 1 - 1 / (1 + mu / 2)
    rc = 2 * r - (1 - 1 / (1 + mu))
    assert alpha(cp_of(make_thermal(mu))) == pytest.approx(rc / r**2, rel=1e-9)
    assert alpha(cp_of(make_thermal(mu))) == pytest.approx(2.0, abs=0.02)


def test_alpha_loss_invariance():
    # exact for Poissonian light and for any state without multiphoton support
    from qpl.photon_stats import PhotonNumberDistribution

    for eta in (1.0, 0.5, 0.34, 0.01):
        assert alpha(cp_of(apply_loss(make_poisson(0.3), eta))) == pytest.approx(1.0, abs=1e-9)
        d = apply_loss(PhotonNumberDistribution(np.array([0.2, 0.8])), eta)
        assert alpha(cp_of(d)) == 0.0
    # click saturation makes it approximate otherwise, with an O(mean) deviation
    d = make_thermal(1e-3)
    a0 = alpha(cp_of(d))
    for eta in (0.5, 0.1):
        assert alpha(cp_of(apply_loss(d, eta))) == pytest.approx(a0, abs=2 * d.mean)


def test_alpha_undefined_without_singles():
    with pytest.raises(ValueError):
        alpha(ClickProbabilities.exact(0.0, 0.2, 0.0))


def test_witness_d_examples():
    assert witness_d(cp_of(make_fock(1))) == pytest.approx(0.5, abs=1e-15)
    assert witness_d(ClickProbabilities.exact(0, 0, 0)) == 0.0
    for mu in (0.01, 0.3, 2.0):
        assert abs(witness_d(cp_of(make_poisson(mu)))) < 1e-12


def test_witness_d_poisson_mixture_zero():
    # a mixture of Poissonians with unequal split still factorizes per component only;
    # for a single Poissonian with any split the witness vanishes
    c = hbt_click_probabilities(make_poisson(0.4), split=0.3)
    assert abs(witness_d(ClickProbabilities.exact(c["r1"], c["r2"], c["rc"]))) < 1e-12


def test_eta_2ph():
    assert eta_2ph(90.0, 1000.0) == pytest.approx(0.09)
    assert eta_2ph(90.0, 1000.0, accidental_rate=10.0) == pytest.approx(0.08)
    assert eta_2ph(5.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        eta_2ph(1.0, 0.0)


def test_repeat_std():
    out = repeat_std(lambda i: {"x": 3.0}, k=5)
    assert out["x"] == (3.0, 0.0)
    with pytest.raises(ValueError):
        repeat_std(lambda i: 1.0, k=1)


def test_repeat_std_matches_binomial_error():
    n, p = 20000, 0.1
    stds = []
    for rep in range(40):
        rng = np.random.default_rng(rep)
        out = repeat_std(lambda i: {"r": rng.binomial(n, p) / n}, k=5)
        stds.append(out["r"][1])
    expected = math.sqrt(p * (1 - p) / n)
    # mean of 40 sample stds (k=5) is c4*sigma with c4 = 0.94
    assert np.mean(stds) == pytest.approx(0.94 * expected, rel=3 * 0.35 / math.sqrt(40))


def test_delta_method_alpha_matches_monte_carlo():
    rng = np.random.default_rng(3)
    cells = np.array([0.05, 0.05, 0.01, 0.89])
    n = 50000
    draws = rng.multinomial(n, cells, size=2000)
    alphas = []
    for d in draws:
        a, b, c, _ = d
        alphas.append(alpha(click_probs(HbtCounts(n, a + c, b + c, c, 1, 0))))
    cp = click_probs(HbtCounts(n, int(0.06 * n), int(0.06 * n), int(0.01 * n), 1, 0))
    assert propagate_sigma(alpha, cp) == pytest.approx(np.std(alphas), rel=0.08)
