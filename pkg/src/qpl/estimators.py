"""From HBT click tallies to photon-number estimates and nonclassicality witnesses."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, is_dataclass
from typing import Callable, Mapping

import numpy as np

from .engine import HbtCounts
from .photon_stats import StateModel

# estimate_state is first order in P2+; above this it is flagged
VALIDITY_P2 = 0.1


class EstimatorBiasWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ClickProbabilities:
    """Per-herald click probabilities of the two HBT detectors.

    r1, r2: at least one click on detector a / b; rc: clicks on both;
    r00: no click at all.  ``n_heralds = 0`` marks exact (probability-level)
    values without sampling error.
    """

    r1: float
    r2: float
    rc: float
    r00: float
    sigma_r1: float = 0.0
    sigma_r2: float = 0.0
    sigma_rc: float = 0.0
    sigma_r00: float = 0.0
    n_heralds: int = 0

    def __post_init__(self):
        if self.rc > min(self.r1, self.r2) + 1e-12:
            raise ValueError("rc cannot exceed r1 or r2")
        if abs(self.r00 - (1 - self.r1 - self.r2 + self.rc)) > 1e-12:
            raise ValueError("r00 must equal 1 - r1 - r2 + rc")
        for v in (self.r1, self.r2, self.rc, self.r00):
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValueError("click probabilities must lie in [0, 1]")

    @classmethod
    def exact(cls, r1: float, r2: float, rc: float) -> "ClickProbabilities":
        return cls(r1, r2, rc, 1.0 - r1 - r2 + rc)

    @property
    def cells(self) -> np.ndarray:
        """Multinomial cell probabilities (a only, b only, both, none)."""
        return np.array([self.r1 - self.rc, self.r2 - self.rc, self.rc, self.r00])


def _binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else 0.0


def click_probs(counts: HbtCounts) -> ClickProbabilities:
    n = counts.n_heralds
    if n <= 0:
        raise ValueError("click probabilities need at least one herald")
    r1, r2, rc = counts.n_a / n, counts.n_b / n, counts.n_ab / n
    r00 = (n - counts.n_a - counts.n_b + counts.n_ab) / n
    return ClickProbabilities(
        r1,
        r2,
        rc,
        r00,
        _binomial_sigma(r1, n),
        _binomial_sigma(r2, n),
        _binomial_sigma(rc, n),
        _binomial_sigma(r00, n),
        n,
    )


def propagate_sigma(func: Callable[[ClickProbabilities], float], cp: ClickProbabilities) -> float:
    """First-order (delta-method) standard error of ``func`` under multinomial sampling."""
    if cp.n_heralds == 0:
        return 0.0
    p = cp.cells
    cov = (np.diag(p) - np.outer(p, p)) / cp.n_heralds
    # parametrize by the three free cells (a only, b only, both)
    grad = np.zeros(4)
    for k in range(3):
        h = 1e-7 * max(p[k], 1e-6)
        up, dn = p.copy(), p.copy()
        up[k] += h
        up[3] -= h
        dn[k] -= h
        dn[3] += h
        grad[k] = (_eval_cells(func, up) - _eval_cells(func, dn)) / (2 * h)
    return float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def _eval_cells(func, cells) -> float:
    a, b, c, _ = cells
    r1, r2 = a + c, b + c
    # bypass validation: perturbed cells may leave [0, 1] by ~1e-13
    cp = object.__new__(ClickProbabilities)
    for name, v in zip(("r1", "r2", "rc", "r00"), (r1, r2, c, 1 - r1 - r2 + c)):
        object.__setattr__(cp, name, v)
    return func(cp)


def raw_estimates(cp: ClickProbabilities) -> tuple[float, float]:
    """Unclipped (P1, P2+) from the 50:50 splitting inversion."""
    p2 = 2.0 * cp.rc
    p1 = cp.r1 + cp.r2 - 2.0 * cp.rc
    return p1, p2


def estimate_state(cp: ClickProbabilities, warn: bool = True) -> StateModel:
    """P2+ = 2 rc, P1 = r1 + r2 - 2 rc, P0 = remainder.

    Exact for photon numbers <= 1 and first order in P2+ otherwise, since
    the n >= 3 terms and the 1/2 chance of two photons sharing a detector
    beyond first order are neglected.  Out-of-range values are clipped and
    the result is marked ``clipped``.
    """
    p1, p2 = raw_estimates(cp)
    n = cp.n_heralds
    s1 = _binomial_sigma(p1, n)
    s2 = 2.0 * _binomial_sigma(cp.rc, n)
    clipped = False
    if p2 > 1:
        p2, clipped = 1.0, True
    if p1 > 1 - p2:
        # P1 is then fixed by P2+ and inherits its error
        p1, s1, clipped = 1.0 - p2, s2, True
    if warn and p2 > VALIDITY_P2:
        warnings.warn(f"P2+ = {p2:.3g} is outside the first-order regime of the estimator", EstimatorBiasWarning)
    p0 = max(0.0, 1.0 - p1 - p2)
    return StateModel(p0, p1, p2, s1, s2, clipped)


def alpha(cp: ClickProbabilities) -> float:
    """Coincidence-to-singles ratio rc / (r1 r2); 1 for coherent, 2 for thermal light."""
    denom = cp.r1 * cp.r2
    if denom <= 0:
        raise ValueError("alpha is undefined without single-detector clicks")
    return cp.rc / denom


def witness_d(cp: ClickProbabilities) -> float:
    """D = sqrt((1 - r1)(1 - r2)) - sqrt(r00).

    The single-detector no-click probability is the geometric mean of both
    detectors.  D vanishes for any Poissonian field and is positive for
    sub-Poissonian light.
    """
    return math.sqrt(max((1 - cp.r1) * (1 - cp.r2), 0.0)) - math.sqrt(max(cp.r00, 0.0))


def eta_2ph(coincidence_rate: float, herald_rate: float, accidental_rate: float = 0.0) -> float:
    """Two-photon coupling efficiency from accidental-subtracted coincidences."""
    if herald_rate <= 0:
        raise ValueError("herald rate must be positive")
    return min(max((coincidence_rate - accidental_rate) / herald_rate, 0.0), 1.0)


def _as_mapping(result) -> dict:
    if isinstance(result, Mapping):
        return dict(result)
    if is_dataclass(result):
        return {k: v for k, v in asdict(result).items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
    return {"value": float(result)}


def repeat_std(procedure: Callable[[int], object], k: int = 5) -> dict[str, tuple[float, float]]:
    """Run ``procedure(i)`` for i = 0..k-1; mean and sample standard deviation per quantity."""
    if k < 2:
        raise ValueError("need at least two repetitions")
    runs = [_as_mapping(procedure(i)) for i in range(k)]
    out = {}
    for key in runs[0]:
        vals = np.array([r[key] for r in runs], dtype=float)
        out[key] = (float(vals.mean()), float(vals.std(ddof=1)))
    return out
