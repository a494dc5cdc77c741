"""Quantum non-Gaussianity criterion, loss depth and thermal-noise threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

from .photon_stats import (
    StateModel,
    apply_loss,
    make_thermal,
    mix_incoherent,
    surrogate,
    to_state_model,
)

BISECT_TOL = 1e-6
BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class QngVerdict:
    is_qng: bool
    margin: float
    sigma_margin: float


@dataclass(frozen=True)
class TrajectoryPoint:
    control: float
    p1: float
    p2plus: float
    margin: float
    nsr: float = math.nan


@dataclass(frozen=True)
class Bracket:
    """Certified bisection bracket: the predicate is false at ``lo`` and true at ``hi``."""

    lo: float
    hi: float
    value_lo: float
    value_hi: float
    iterations: int

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class LossDepth:
    depth: float
    eta_min: float
    closed_form_depth: float
    bracket: Bracket | None = None
    worst_case_depth: float | None = None

    def __float__(self) -> float:
        return self.depth


@dataclass(frozen=True)
class NsrThreshold:
    nsr: float
    thermal_mean: float
    bracket: Bracket | None = None

    def __float__(self) -> float:
        return self.nsr


def qng_margin(p1: float, p2plus: float) -> float:
    return 2.0 / 3.0 * p1**3 - p2plus


def qng_criterion(state: StateModel) -> QngVerdict:
    """Sufficient QNG condition P2+ < 2/3 P1^3 with first-order error propagation."""
    margin = qng_margin(state.p1, state.p2plus)
    sigma = math.hypot(2.0 * state.p1**2 * state.sigma_p1, state.sigma_p2plus)
    return QngVerdict(margin > 0, margin, sigma)


def bisect_predicate(
    value: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = BISECT_TOL,
    max_iter: int = BISECT_MAX_ITER,
) -> Bracket:
    """Shrink [lo, hi] around the point where ``value`` turns positive.

    ``value(lo) <= 0 < value(hi)`` is required; ``lo`` may exceed ``hi``
    when the predicate holds on the left side.
    """
    v_lo, v_hi = value(lo), value(hi)
    if not (v_lo <= 0 < v_hi):
        raise ValueError(f"no sign change in bracket: f({lo})={v_lo}, f({hi})={v_hi}")
    it = 0
    while abs(hi - lo) > tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        v = value(mid)
        if v > 0:
            hi, v_hi = mid, v
        else:
            lo, v_lo = mid, v
        it += 1
    return Bracket(lo, hi, v_lo, v_hi, it)


def _margin_after_loss(state: StateModel, eta: float, multiphoton_n: int) -> float:
    s = to_state_model(apply_loss(surrogate(state, multiphoton_n), eta))
    return qng_margin(s.p1, s.p2plus)


def closed_form_eta_min(state: StateModel) -> float:
    if state.p1 <= 0:
        return math.inf
    return 1.5 * state.p2plus / state.p1**3


def qng_depth_loss(state: StateModel, multiphoton_n: int = 2, worst_case: bool = True) -> LossDepth:
    """Largest optical loss 1 - eta for which the criterion still holds.

    The state is replaced by its surrogate with all multiphoton mass at
    ``multiphoton_n`` and pushed through the exact binomial loss channel.
    With ``worst_case`` the n = 3 placement is evaluated as well.
    """
    cf = max(0.0, 1.0 - closed_form_eta_min(state))
    if not qng_criterion(state).is_qng:
        return LossDepth(0.0, 1.0, cf)
    if state.p2plus == 0:
        return LossDepth(1.0, 0.0, 1.0, worst_case_depth=1.0 if worst_case else None)

    br = bisect_predicate(lambda eta: _margin_after_loss(state, eta, multiphoton_n), 0.0, 1.0)
    worst = None
    if worst_case and multiphoton_n == 2:
        worst = qng_depth_loss(state, multiphoton_n=3, worst_case=False).depth
    return LossDepth(1.0 - br.hi, br.hi, cf, br, worst)


def loss_trajectory(state: StateModel, etas: Iterable[float], multiphoton_n: int = 2) -> list[TrajectoryPoint]:
    out = []
    base = surrogate(state, multiphoton_n)
    for eta in etas:
        s = to_state_model(apply_loss(base, eta))
        out.append(TrajectoryPoint(float(eta), s.p1, s.p2plus, qng_margin(s.p1, s.p2plus)))
    return out


def thermal_probability(mu: float, t: float, convention: str = "post", occupancy: float = 1.0) -> float:
    """Per-window thermal detection probability used in the NSR.

    ``mu`` is always the pre-splitter thermal mean.  With ``convention="post"``
    only the fraction 1 - t reflected into the signal path is counted.
    """
    if convention == "post":
        return (1.0 - t) * mu * occupancy
    if convention == "pre":
        return mu * occupancy
    raise ValueError(f"unknown NSR convention {convention!r}")


def _mixed_state(state: StateModel, mu: float, t: float, multiphoton_n: int) -> StateModel:
    return to_state_model(mix_incoherent(surrogate(state, multiphoton_n), t, make_thermal(mu)))


def thermal_trajectory(
    state: StateModel,
    thermal_means: Iterable[float],
    t: float = 0.9,
    convention: str = "post",
    occupancy: float = 1.0,
    multiphoton_n: int = 2,
) -> list[TrajectoryPoint]:
    """States obtained by mixing the signal with thermal light on a t:(1-t) splitter."""
    if not 0 < t <= 1:
        raise ValueError("splitter transmission must be in (0, 1]")
    out = []
    for mu in thermal_means:
        s = _mixed_state(state, float(mu), t, multiphoton_n)
        nsr = thermal_probability(float(mu), t, convention, occupancy) / state.p1 if state.p1 > 0 else math.inf
        out.append(TrajectoryPoint(float(mu), s.p1, s.p2plus, qng_margin(s.p1, s.p2plus), nsr))
    return out


def nsr_threshold(
    state: StateModel,
    t: float = 0.9,
    convention: str = "post",
    occupancy: float = 1.0,
    multiphoton_n: int = 2,
    mu_max: float = 50.0,
) -> NsrThreshold:
    """Thermal noise-to-signal ratio at which the criterion stops holding."""
    if not 0 < t <= 1:
        raise ValueError("splitter transmission must be in (0, 1]")

    def margin(mu):
        s = _mixed_state(state, mu, t, multiphoton_n)
        return qng_margin(s.p1, s.p2plus)

    if margin(0.0) <= 0:
        raise ValueError("state is not QNG after the splitter loss; no threshold exists")
    hi = max(state.p1, 1e-6)
    while margin(hi) > 0:
        hi *= 2.0
        if hi > mu_max:
            return NsrThreshold(math.inf, math.inf)
    # predicate "criterion violated" is false at 0 and true at hi
    br = bisect_predicate(lambda mu: -margin(mu), 0.0, hi)
    mu = br.hi
    nsr = thermal_probability(mu, t, convention, occupancy) / state.p1
    return NsrThreshold(nsr, mu, br)
