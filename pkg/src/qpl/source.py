"""Monte Carlo model of a warm-vapour SFWM photon-pair source.

Each pair emits an anti-Stokes photon at time t and a Stokes photon at
t + delta with delta drawn from a two-sided exponential (Laplace) density.
Emission depth follows a Gaussian interaction profile truncated to the cell;
the anti-Stokes photon is attenuated by Beer-Lambert absorption along its
path to the output viewport at x = 0.  Uncorrelated background is added per
field as a Poissonian or thermal (bunched) point process.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, NamedTuple

import numba
import numpy as np
from scipy import integrate, special, stats

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

STOKES = 0
ANTI_STOKES = 1
FIELD_NAMES = {STOKES: "stokes", ANTI_STOKES: "antistokes"}

NOISE_KINDS = ("poissonian", "thermal")

# thinning bound on the relative intensity |E|^2 of a thermal field; it is
# exceeded with probability exp(-cap), which shifts <I^2> by ~2e-7 relative
THERMAL_CAP = 16.0
SHARD_DURATION = 0.05


@dataclass(frozen=True)
class SourceParams:
    """Phenomenological source description.

    Rates are photons/s; ``noise_rate_*`` is background reaching the detectors
    and is not scaled by the passive transmissions.  ``d`` is the distance of
    the interaction centre from the output viewport (negative inside the
    cell).  ``pair_coherence_time`` switches pair creation from Poissonian to
    a chaotic (thermal) process with that field coherence time.

    The remaining keyword fields (detuning, temperature, waist, ...) are kept
    for documentation and never enter the model.
    """

    pair_rate: float = 0.0
    wavepacket_tau: float = 2.25e-9
    noise_rate_s: float = 0.0
    noise_rate_as: float = 0.0
    noise_kind: str = "poissonian"
    noise_coherence_time: float | None = None
    pair_coherence_time: float | None = None
    d: float = -37.5e-3
    interaction_fwhm: float = 18e-3
    cell_length: float = 75e-3
    absorption_coeff: float = 0.0
    eta_opt_s: float = 1.0
    eta_opt_as: float = 1.0
    detuning_hz: float | None = None
    cell_temperature_c: float | None = None
    waist_m: float | None = None
    notes: str = ""

    def __post_init__(self):
        for name in ("pair_rate", "noise_rate_s", "noise_rate_as", "absorption_coeff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.wavepacket_tau <= 0:
            raise ValueError("wavepacket_tau must be positive")
        if self.interaction_fwhm <= 0 or self.cell_length <= 0:
            raise ValueError("interaction_fwhm and cell_length must be positive")
        for name in ("eta_opt_s", "eta_opt_as"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")
        if self.noise_kind == "thermal" and not (self.noise_coherence_time and self.noise_coherence_time > 0):
            raise ValueError("thermal noise needs a positive noise_coherence_time")
        if self.pair_coherence_time is not None and self.pair_coherence_time <= 0:
            raise ValueError("pair_coherence_time must be positive")

    @property
    def sigma(self) -> float:
        return self.interaction_fwhm * FWHM_TO_SIGMA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SourceParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown source parameters: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> "SourceParams":
        return replace(self, **changes)


class EmissionEvent(NamedTuple):
    time: float
    channel: str
    pair_id: int | None
    origin_depth: float | None


@dataclass(frozen=True)
class EventSet:
    """Columnar, time-sorted emission events.

    ``pair_id`` is -1 and ``depth`` NaN for background photons.
    """

    time: np.ndarray
    field: np.ndarray
    pair_id: np.ndarray
    depth: np.ndarray
    duration: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.time)
        if not all(len(x) == n for x in (self.field, self.pair_id, self.depth)):
            raise ValueError("event columns differ in length")

    def __len__(self) -> int:
        return len(self.time)

    def __iter__(self) -> Iterator[EmissionEvent]:
        for t, f, p, x in zip(self.time, self.field, self.pair_id, self.depth):
            yield EmissionEvent(float(t), FIELD_NAMES[int(f)], None if p < 0 else int(p), None if np.isnan(x) else float(x))

    def select(self, mask) -> "EventSet":
        return EventSet(self.time[mask], self.field[mask], self.pair_id[mask], self.depth[mask], self.duration, self.meta)

    def times(self, field_id: int) -> np.ndarray:
        return self.time[self.field == field_id]

    def save(self, path) -> None:
        np.savez(
            path,
            time=self.time,
            field=self.field,
            pair_id=self.pair_id,
            depth=self.depth,
            duration=np.float64(self.duration),
        )

    @classmethod
    def load(cls, path) -> "EventSet":
        with np.load(path) as z:
            return cls(z["time"], z["field"], z["pair_id"], z["depth"], float(z["duration"]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventSet):
            return NotImplemented
        return (
            self.duration == other.duration
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.field, other.field)
            and np.array_equal(self.pair_id, other.pair_id)
            and np.array_equal(self.depth, other.depth, equal_nan=True)
        )


def _empty_events(duration: float) -> EventSet:
    return EventSet(np.zeros(0), np.zeros(0, np.uint8), np.zeros(0, np.int64), np.zeros(0), duration)


# ---------------------------------------------------------------- geometry


def geometry_overlap(d: float, interaction_fwhm: float, cell_length: float) -> float:
    """Mass of the Gaussian interaction profile centred at d inside [-L, 0]."""
    if interaction_fwhm <= 0 or cell_length <= 0:
        raise ValueError("interaction_fwhm and cell_length must be positive")
    s = interaction_fwhm * FWHM_TO_SIGMA
    return float(max(special.ndtr((0.0 - d) / s) - special.ndtr((-cell_length - d) / s), 0.0))


def _log_mass(lo: float, hi: float) -> float:
    """log(Phi(hi) - Phi(lo)) for standardized bounds, stable in both tails."""
    if lo >= 0:
        # use upper tails
        return _log_mass(-hi, -lo)
    return float(special.log_ndtr(hi) + np.log1p(-np.exp(min(special.log_ndtr(lo) - special.log_ndtr(hi), 0.0))))


def antistokes_transmission(d: float, interaction_fwhm: float, absorption_coeff: float, cell_length: float) -> float:
    """Profile-weighted mean of exp(-kappa |x|) over emission depths inside the cell.

    Uses the closed form of a truncated-normal moment generating function,
    E[exp(kappa x)] = exp(kappa mu + kappa^2 s^2 / 2) * mass(shifted) / mass.
    """
    if absorption_coeff < 0:
        raise ValueError("absorption_coeff must be non-negative")
    if absorption_coeff == 0:
        return 1.0
    s = interaction_fwhm * FWHM_TO_SIGMA
    k = absorption_coeff
    a, b = (-cell_length - d) / s, (0.0 - d) / s
    log_mass = _log_mass(a, b)
    if not np.isfinite(log_mass):
        # no mass inside the cell; the profile limit is its nearest boundary
        return math.exp(-k * cell_length) if d < -cell_length else 1.0
    shift = k * s
    log_num = k * d + 0.5 * (k * s) ** 2 + _log_mass(a - shift, b - shift)
    return float(min(math.exp(log_num - log_mass), 1.0))


def antistokes_transmission_quad(d, interaction_fwhm, absorption_coeff, cell_length) -> float:
    """Direct quadrature of the same average; slower reference implementation."""
    s = interaction_fwhm * FWHM_TO_SIGMA
    pdf = stats.norm(d, s).pdf
    pts = [min(max(d, -cell_length), 0.0)]
    num = integrate.quad(lambda x: pdf(x) * math.exp(-absorption_coeff * abs(x)), -cell_length, 0, points=pts, limit=200)[0]
    den = integrate.quad(pdf, -cell_length, 0, points=pts, limit=200)[0]
    return num / den


def sample_depths(rng: np.random.Generator, n: int, d: float, interaction_fwhm: float, cell_length: float) -> np.ndarray:
    s = interaction_fwhm * FWHM_TO_SIGMA
    a, b = (-cell_length - d) / s, (0.0 - d) / s
    return stats.truncnorm.rvs(a, b, loc=d, scale=s, size=n, random_state=rng)


# ---------------------------------------------------------------- arrival processes


@numba.njit(nogil=True, cache=True)
def _thermal_thin(gaps, xi_re, xi_im, u, tau_c, cap, state):
    """Thin candidate arrivals by the relative intensity |E|^2 of an OU field.

    state = [t, Re E, Im E] is carried across chunks.
    """
    t = state[0]
    er = state[1]
    ei = state[2]
    out = np.empty(gaps.size)
    k = 0
    for i in range(gaps.size):
        dt = gaps[i]
        t += dt
        rho = math.exp(-dt / tau_c)
        c = math.sqrt(max(1.0 - rho * rho, 0.0))
        er = rho * er + c * xi_re[i]
        ei = rho * ei + c * xi_im[i]
        if u[i] * cap < er * er + ei * ei:
            out[k] = t
            k += 1
    state[0] = t
    state[1] = er
    state[2] = ei
    return out[:k]


def thermal_arrivals(
    rng: np.random.Generator,
    rate: float,
    t0: float,
    t1: float,
    coherence_time: float,
    cap: float = THERMAL_CAP,
    chunk: int = 1 << 20,
) -> np.ndarray:
    """Arrival times of chaotic light with mean rate ``rate`` on [t0, t1).

    The intensity is rate*|E(t)|^2 with E a unit complex Ornstein-Uhlenbeck
    field, so g1(tau) = exp(-|tau|/coherence_time) and
    g2(tau) = 1 + exp(-2|tau|/coherence_time).  The field is propagated
    exactly between candidate times of a Poisson process at cap*rate and
    each candidate is kept with probability min(1, |E|^2/cap).
    """
    if rate <= 0 or t1 <= t0:
        return np.zeros(0)
    half = math.sqrt(0.5)
    z = rng.normal(scale=half, size=2)
    state = np.array([t0, z[0], z[1]])
    lam = cap * rate
    parts = []
    while True:
        gaps = rng.exponential(1.0 / lam, chunk)
        xi = rng.normal(scale=half, size=(2, chunk))
        u = rng.random(chunk)
        # stop the chunk at t1 so the carried state stays exact
        m = int(np.searchsorted(state[0] + np.cumsum(gaps), t1, side="left"))
        parts.append(_thermal_thin(gaps[:m], xi[0, :m], xi[1, :m], u[:m], coherence_time, cap, state))
        if m < chunk:
            break
    return np.concatenate(parts)


def poisson_arrivals(rng: np.random.Generator, rate: float, t0: float, t1: float) -> np.ndarray:
    if rate <= 0 or t1 <= t0:
        return np.zeros(0)
    n = rng.poisson(rate * (t1 - t0))
    return np.sort(rng.uniform(t0, t1, n))


def _arrivals(rng, rate, t0, t1, coherence_time):
    if coherence_time is None:
        return poisson_arrivals(rng, rate, t0, t1)
    return thermal_arrivals(rng, rate, t0, t1, coherence_time)


# ---------------------------------------------------------------- generation


def _generate_shard(params: SourceParams, t0: float, t1: float, seed_seq: np.random.SeedSequence):
    rng_pair, rng_noise_s, rng_noise_as = (np.random.default_rng(s) for s in seed_seq.spawn(3))
    g = geometry_overlap(params.d, params.interaction_fwhm, params.cell_length)
    t_pair = _arrivals(rng_pair, params.pair_rate * g, t0, t1, params.pair_coherence_time)
    n = t_pair.size
    delta = rng_pair.laplace(0.0, params.wavepacket_tau, n)
    depth = sample_depths(rng_pair, n, params.d, params.interaction_fwhm, params.cell_length) if n else np.zeros(0)
    u = rng_pair.random((2, n))
    keep_as = u[0] < params.eta_opt_as * np.exp(params.absorption_coeff * depth)
    keep_s = u[1] < params.eta_opt_s
    noise_ct = params.noise_coherence_time if params.noise_kind == "thermal" else None
    noise_s = _arrivals(rng_noise_s, params.noise_rate_s, t0, t1, noise_ct)
    noise_as = _arrivals(rng_noise_as, params.noise_rate_as, t0, t1, noise_ct)
    local_id = np.arange(n, dtype=np.int64)
    return (
        np.concatenate([t_pair[keep_as], t_pair[keep_s] + delta[keep_s], noise_s, noise_as]),
        np.concatenate(
            [
                np.full(keep_as.sum(), ANTI_STOKES, np.uint8),
                np.full(keep_s.sum(), STOKES, np.uint8),
                np.full(noise_s.size, STOKES, np.uint8),
                np.full(noise_as.size, ANTI_STOKES, np.uint8),
            ]
        ),
        np.concatenate([local_id[keep_as], local_id[keep_s], np.full(noise_s.size + noise_as.size, -1, np.int64)]),
        np.concatenate([depth[keep_as], depth[keep_s], np.full(noise_s.size + noise_as.size, np.nan)]),
        n,
    )


def generate_events(
    params: SourceParams,
    duration: float,
    seed: int,
    threads: int = 1,
    shard_duration: float = SHARD_DURATION,
) -> EventSet:
    """Simulate emission events on [0, duration).

    The run is cut into fixed time shards with seeds derived from ``seed``
    and the shard index, so the output is independent of ``threads``.  Pair
    members falling outside [0, duration) are dropped.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n_shards = max(1, math.ceil(duration / shard_duration))
    edges = np.minimum(np.arange(n_shards + 1) * shard_duration, duration)
    seqs = np.random.SeedSequence(seed).spawn(n_shards)
    jobs = [(params, edges[k], edges[k + 1], seqs[k]) for k in range(n_shards)]
    if threads > 1 and n_shards > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            shards = list(ex.map(lambda j: _generate_shard(*j), jobs))
    else:
        shards = [_generate_shard(*j) for j in jobs]

    offset = 0
    cols = [[], [], [], []]
    for t, f, pid, x, n in shards:
        pid = np.where(pid >= 0, pid + offset, -1)
        offset += n
        for c, v in zip(cols, (t, f, pid, x)):
            c.append(v)
    if not cols[0]:
        return _empty_events(duration)
    time, fld, pid, depth = (np.concatenate(c) for c in cols)
    inside = (time >= 0) & (time < duration)
    time, fld, pid, depth = time[inside], fld[inside], pid[inside], depth[inside]
    order = np.lexsort((pid, fld, time))
    return EventSet(time[order], fld[order], pid[order], depth[order], duration, {"pairs_created": offset})


def generate_tmsv_pulses(
    pair_prob: float,
    signal_efficiency: float,
    n_heralds: int,
    seed: int,
    herald_efficiency: float = 1.0,
    period: float = 81e-12 * 1234,
    signal_delay: float = 81e-12 * 12,
) -> EventSet:
    """Pulsed two-mode squeezed vacuum, kept only for pulses whose herald clicks.

    Pair number per pulse is geometric, P(n) = (1 - lam) lam^n.  Each kept
    pulse k yields one anti-Stokes (herald) event at k*period and
    Binomial(n, signal_efficiency) Stokes photons ``signal_delay`` later.
    """
    if not 0 <= pair_prob < 1:
        raise ValueError("pair_prob must lie in [0, 1)")
    if not 0 < herald_efficiency <= 1 or not 0 <= signal_efficiency <= 1:
        raise ValueError("efficiencies must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    counts = []
    need = n_heralds
    while need > 0:
        # n >= 1 conditioned: n - 1 is geometric with the same ratio
        m = int(need * 1.2) + 16
        n = 1 + (rng.geometric(1 - pair_prob, m) - 1 if pair_prob > 0 else np.zeros(m, np.int64))
        if herald_efficiency < 1:
            n = n[rng.random(m) < 1 - (1 - herald_efficiency) ** n]
        counts.append(n[:need])
        need -= counts[-1].size
    n = np.concatenate(counts)
    k = rng.binomial(n, signal_efficiency)
    t_h = np.arange(n_heralds) * period
    t_s = np.repeat(t_h + signal_delay, k)
    pid = np.arange(n_heralds, dtype=np.int64)
    time = np.concatenate([t_h, t_s])
    fld = np.concatenate([np.full(n_heralds, ANTI_STOKES, np.uint8), np.full(t_s.size, STOKES, np.uint8)])
    pids = np.concatenate([pid, np.repeat(pid, k)])
    order = np.lexsort((fld, time))
    return EventSet(
        time[order],
        fld[order],
        pids[order],
        np.full(time.size, np.nan),
        float(n_heralds * period),
        {"photons_per_pulse": n},
    )


# ---------------------------------------------------------------- predictions


def laplace_window_mass(half_width: float, tau: float, jitter_sigma: float = 0.0) -> float:
    """P(|delta + e| < half_width) for delta ~ Laplace(tau), e ~ N(0, jitter_sigma)."""
    if half_width <= 0:
        return 0.0
    if jitter_sigma <= 0:
        return 1.0 - math.exp(-half_width / tau)

    def integrand(x):
        inside = special.ndtr((half_width - x) / jitter_sigma) - special.ndtr((-half_width - x) / jitter_sigma)
        return math.exp(-abs(x) / tau) / (2 * tau) * inside

    span = half_width + 40 * tau + 10 * jitter_sigma
    val = 0.0
    for lo, hi in ((-span, 0.0), (0.0, span)):
        val += integrate.quad(integrand, lo, hi, points=[-half_width, half_width] if lo < 0 else None, limit=400)[0]
    return float(val)


@dataclass(frozen=True)
class RatePrediction:
    m_s: float
    m_as: float
    coincidence: float
    accidental: float
    g2_sas_zero: float
    eta_2ph: float
    t_bin: float


def effective_rates(
    params: SourceParams,
    t_bin: float,
    detectors: dict | None = None,
    herald: str = "antistokes",
    eta_window: float | None = None,
) -> RatePrediction:
    """Closed-form detected rates for a peak-centred coincidence window.

    M_S = G p eta_S + n_S, M_AS = G p eta_AS + n_AS (G the geometry overlap),
    C(T) = G p eta_S eta_AS F(T) + M_S M_AS T with F the delay-density mass in
    the window, g2_SAS(0) = C / (M_S M_AS T).  ``eta_2ph`` is the accidental
    subtracted coincidence rate per herald at ``eta_window`` (defaults to
    ``t_bin``).

    With ``detectors`` (channel -> DetectorParams, Stokes on 0/1 and
    anti-Stokes on 2) efficiencies, dark counts, jitter and a
    non-paralyzable dead-time correction are folded in.
    """
    g = geometry_overlap(params.d, params.interaction_fwhm, params.cell_length)
    gp = g * params.pair_rate
    eta_s = params.eta_opt_s
    eta_as = params.eta_opt_as * antistokes_transmission(
        params.d, params.interaction_fwhm, params.absorption_coeff, params.cell_length
    )
    n_s, n_as = params.noise_rate_s, params.noise_rate_as
    jitter = 0.0
    if detectors:
        ds = [detectors[c] for c in (0, 1) if c in detectors]
        das = detectors.get(2)
        eff_s = float(np.mean([d.efficiency for d in ds])) if ds else 1.0
        eff_as = das.efficiency if das else 1.0
        eta_s, eta_as = eta_s * eff_s, eta_as * eff_as
        n_s = n_s * eff_s + sum(d.dark_rate for d in ds)
        n_as = n_as * eff_as + (das.dark_rate if das else 0.0)
        js = float(np.mean([d.jitter_sigma for d in ds])) if ds else 0.0
        jitter = math.hypot(js, das.jitter_sigma if das else 0.0)
    m_s = gp * eta_s + n_s
    m_as = gp * eta_as + n_as
    live = 1.0  # probability that both detectors of a pair are live
    if detectors:
        ds = [detectors[c] for c in (0, 1) if c in detectors]
        if ds:
            per = m_s / len(ds)
            m_s = sum(per / (1 + per * d.dead_time) for d in ds)
            live *= float(np.mean([1 / (1 + per * d.dead_time) for d in ds]))
        if 2 in detectors:
            live *= 1 / (1 + m_as * detectors[2].dead_time)
            m_as = m_as / (1 + m_as * detectors[2].dead_time)

    def coinc(w):
        return live * gp * eta_s * eta_as * laplace_window_mass(w / 2, params.wavepacket_tau, jitter)

    acc = m_s * m_as * t_bin
    c = coinc(t_bin) + acc
    g2 = c / acc if acc > 0 else math.inf
    herald_rate = m_as if herald == "antistokes" else m_s
    w_eta = t_bin if eta_window is None else eta_window
    eta = coinc(w_eta) / herald_rate if herald_rate > 0 else 0.0
    return RatePrediction(m_s, m_as, c, acc, g2, eta, t_bin)
