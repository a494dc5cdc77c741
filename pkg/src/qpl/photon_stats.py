"""Exact photon-number distribution algebra.

Everything here works on finite probability vectors P_n, n = 0..n_max, and is
used both as the analytic model of the heralded state and as the oracle for
the Monte Carlo chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

DEFAULT_TAIL = 1e-12
_N_HARD_CAP = 20000


@dataclass(frozen=True)
class PhotonNumberDistribution:
    """Truncated photon-number distribution.

    Args:
        probs: probabilities P_n for n = 0..n_max.
        tail: probability mass discarded by truncation (before renormalization).
    """

    probs: np.ndarray
    tail: float = 0.0
    tolerance: float = field(default=DEFAULT_TAIL, compare=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-D sequence")
        if np.any(p < -1e-15) or np.any(p > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        total = p.sum()
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total}, not 1")
        p = np.clip(p, 0.0, 1.0) / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def __getitem__(self, n: int) -> float:
        return float(self.probs[n]) if 0 <= n < self.probs.size else 0.0


@dataclass(frozen=True)
class StateModel:
    """Three-outcome heralded state {P0, P1, P2+} with standard errors."""

    p0: float
    p1: float
    p2plus: float
    sigma_p1: float = 0.0
    sigma_p2plus: float = 0.0
    clipped: bool = False

    def __post_init__(self):
        for name in ("p0", "p1", "p2plus"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.p0 + self.p1 + self.p2plus - 1.0) > 1e-9:
            raise ValueError("p0 + p1 + p2plus must equal 1")
        if self.sigma_p1 < 0 or self.sigma_p2plus < 0:
            raise ValueError("standard errors must be non-negative")

    @classmethod
    def from_p1_p2(cls, p1: float, p2plus: float, sigma_p1=0.0, sigma_p2plus=0.0) -> "StateModel":
        return cls(1.0 - p1 - p2plus, p1, p2plus, sigma_p1, sigma_p2plus)


def _finish(probs: np.ndarray, tail: float) -> PhotonNumberDistribution:
    return PhotonNumberDistribution(probs / probs.sum(), tail=float(max(tail, 0.0)))


def make_fock(n: int) -> PhotonNumberDistribution:
    if n < 0:
        raise ValueError("photon number must be non-negative")
    p = np.zeros(n + 1)
    p[n] = 1.0
    return PhotonNumberDistribution(p)


def make_thermal(mean: float, tail: float = DEFAULT_TAIL) -> PhotonNumberDistribution:
    """Bose-Einstein distribution P_n = mu^n / (1 + mu)^(n + 1)."""
    if mean < 0:
        raise ValueError("mean photon number must be non-negative")
    if mean == 0:
        return make_fock(0)
    q = mean / (1.0 + mean)
    tail = max(tail * min(1.0, mean * mean), 1e-300)  # keeps normalized moments at the same precision
    # tail beyond N is q^(N+1)
    n_max = min(int(math.ceil(math.log(tail) / math.log(q))), _N_HARD_CAP)
    n = np.arange(n_max + 1)
    probs = (1.0 - q) * q**n
    return _finish(probs, q ** (n_max + 1))


def make_poisson(mean: float, tail: float = DEFAULT_TAIL) -> PhotonNumberDistribution:
    if mean < 0:
        raise ValueError("mean photon number must be non-negative")
    if mean == 0:
        return make_fock(0)
    tail = max(tail * min(1.0, mean * mean), 1e-300)
    n_max = int(stats.poisson.isf(tail, mean)) + 1
    while stats.poisson.sf(n_max, mean) >= tail:
        n_max += 1
    n = np.arange(n_max + 1)
    return _finish(stats.poisson.pmf(n, mean), stats.poisson.sf(n_max, mean))


def make_heralded_tmsv(
    pair_prob: float, herald_efficiency: float, tail: float = DEFAULT_TAIL
) -> PhotonNumberDistribution:
    """Signal state of a two-mode squeezed vacuum conditioned on a herald click.

    The pair number is geometric, P(n) = (1 - lam) lam^n, and the herald is a
    click detector of efficiency eta, so P(n | click) is proportional to
    P(n) (1 - (1 - eta)^n).

    Args:
        pair_prob: lam in [0, 1); lam -> 0 approaches a single photon.
        herald_efficiency: eta in (0, 1].
    """
    lam, eta = pair_prob, herald_efficiency
    if not 0 <= lam < 1:
        raise ValueError("pair_prob must satisfy 0 <= pair_prob < 1")
    if not 0 < eta <= 1:
        raise ValueError("herald_efficiency must be in (0, 1]")
    if lam == 0:
        return make_fock(1)
    p_click = 1.0 - (1.0 - lam) / (1.0 - lam * (1.0 - eta))
    # conditional tail beyond N is bounded by lam^(N+1) / p_click
    n_max = max(1, min(int(math.ceil(math.log(tail * p_click) / math.log(lam))), _N_HARD_CAP))
    n = np.arange(n_max + 1)
    probs = (1.0 - lam) * lam**n * (1.0 - (1.0 - eta) ** n)
    kept = probs.sum()
    return _finish(probs, (p_click - kept) / p_click)


def _binomial_matrix(n_max: int, eta: float) -> np.ndarray:
    n = np.arange(n_max + 1)
    return stats.binom.pmf(n[:, None], n[None, :], eta)


def apply_loss(dist: PhotonNumberDistribution, eta: float) -> PhotonNumberDistribution:
    """Pure-loss channel of transmission ``eta`` (binomial thinning)."""
    if not 0 <= eta <= 1:
        raise ValueError("transmission must be in [0, 1]")
    if eta == 1:
        return dist
    out = _binomial_matrix(dist.n_max, eta) @ dist.probs
    return PhotonNumberDistribution(out / out.sum(), tail=dist.tail)


def mix_incoherent(
    signal: PhotonNumberDistribution, t: float, noise: PhotonNumberDistribution
) -> PhotonNumberDistribution:
    """Phase-insensitive beamsplitter: signal through ``t``, noise through ``1 - t``."""
    if not 0 <= t <= 1:
        raise ValueError("transmission must be in [0, 1]")
    a = apply_loss(signal, t).probs
    b = apply_loss(noise, 1.0 - t).probs
    out = np.convolve(a, b)
    return PhotonNumberDistribution(out / out.sum(), tail=signal.tail + noise.tail)


def factorial_moment(dist: PhotonNumberDistribution, order: int) -> float:
    n = np.arange(dist.probs.size, dtype=float)
    falling = np.ones_like(n)
    for k in range(order):
        falling *= n - k
    return float(falling @ dist.probs)


def g2_zero(dist: PhotonNumberDistribution) -> float:
    mean = dist.mean
    if mean <= 0:
        raise ValueError("g2(0) is undefined for a zero-mean distribution")
    return factorial_moment(dist, 2) / mean**2


def to_state_model(dist: PhotonNumberDistribution) -> StateModel:
    p0 = dist[0]
    p1 = dist[1]
    p2 = float(dist.probs[2:].sum())
    total = p0 + p1 + p2
    return StateModel(p0 / total, p1 / total, p2 / total)


def surrogate(state: StateModel, multiphoton_n: int = 2) -> PhotonNumberDistribution:
    """Distribution with the whole P2+ mass placed at ``multiphoton_n``."""
    if multiphoton_n < 2:
        raise ValueError("multiphoton mass must sit at n >= 2")
    p = np.zeros(multiphoton_n + 1)
    p[0], p[1], p[multiphoton_n] = state.p0, state.p1, state.p2plus
    return PhotonNumberDistribution(p)


def hbt_click_probabilities(dist: PhotonNumberDistribution, split: float = 0.5) -> dict:
    """Exact click probabilities of two ideal click detectors behind a beamsplitter.

    Returns a dict with r1, r2 (single-detector click), rc (both) and r00 (neither).
    """
    n = np.arange(dist.probs.size)
    p = dist.probs
    no_a = float(p @ (1.0 - split) ** n)
    no_b = float(p @ split**n)
    r00 = float(p[0])
    r1, r2 = 1.0 - no_a, 1.0 - no_b
    rc = 1.0 - no_a - no_b + r00
    return {"r1": r1, "r2": r2, "rc": max(rc, 0.0), "r00": r00}
