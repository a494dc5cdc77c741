"""First-order coherence models, visibility, temporal mode number and g2 deconvolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .tags import TICK_SECONDS

SPEED_OF_LIGHT = 299_792_458.0

KINDS = ("two-sided-exponential", "gaussian", "lorentzian")

# tau_I / tau_c of the transform-limited member of each family
REFERENCE_RATIO = {"two-sided-exponential": 0.8, "gaussian": 1.0, "lorentzian": 1.0}


@dataclass(frozen=True)
class WavepacketModel:
    """Single-photon temporal amplitude.

    ``two-sided-exponential``: A(t) = exp(-|t|/width)
    ``gaussian``: A(t) = exp(-t^2 / (2 width^2))
    ``lorentzian``: A(t) = exp(-t/tau0) for t >= 0 with tau0 = 1/(pi width),
    ``width`` being the spectral FWHM in Hz.
    """

    kind: str
    width: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.width > 0:
            raise ValueError("model width must be positive")

    @classmethod
    def two_sided(cls, T: float) -> "WavepacketModel":
        return cls("two-sided-exponential", T)

    @classmethod
    def gaussian(cls, sigma_t: float) -> "WavepacketModel":
        return cls("gaussian", sigma_t)

    @classmethod
    def lorentzian(cls, delta_nu: float) -> "WavepacketModel":
        return cls("lorentzian", delta_nu)

    @property
    def coherence_time(self) -> float:
        """Field decay constant (T, sigma_t or 1/(pi delta_nu))."""
        return 1.0 / (math.pi * self.width) if self.kind == "lorentzian" else self.width

    def intensity(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        w = self.coherence_time
        if self.kind == "two-sided-exponential":
            return np.exp(-2 * np.abs(t) / w)
        if self.kind == "gaussian":
            return np.exp(-(t**2) / w**2)
        return np.where(t >= 0, np.exp(-2 * np.clip(t, 0, None) / w), 0.0)


@dataclass(frozen=True)
class CoherenceCurve:
    taus: np.ndarray
    values: np.ndarray
    kind: str = "g1"
    bin_width: float | None = None
    sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if taus.shape != vals.shape or taus.ndim != 1:
            raise ValueError("taus and values must be 1-D arrays of equal length")
        if taus.size > 1 and np.any(np.diff(taus) <= 0):
            raise ValueError("taus must be strictly increasing")
        if self.kind not in ("g1", "g2", "intensity"):
            raise ValueError("kind must be g1, g2 or intensity")
        finite = vals[np.isfinite(vals)]
        if self.kind == "g1" and np.any(np.abs(finite) > 1 + 1e-9):
            raise ValueError("|g1| must not exceed 1")
        if self.kind == "g2" and np.any(finite < 0):
            raise ValueError("g2 must be non-negative")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "values", vals)


def g1_from_wavepacket(model: WavepacketModel, tau) -> np.ndarray | float:
    """Normalized amplitude autocorrelation of the model."""
    t = np.abs(np.asarray(tau, dtype=float))
    w = model.coherence_time
    if model.kind == "two-sided-exponential":
        out = np.exp(-t / w) * (1 + t / w)
    elif model.kind == "gaussian":
        out = np.exp(-(t**2) / (4 * w**2))
    else:
        out = np.exp(-t / w)
    return float(out) if np.ndim(out) == 0 else out


def g1_curve(model: WavepacketModel, taus) -> CoherenceCurve:
    return CoherenceCurve(np.asarray(taus, float), g1_from_wavepacket(model, taus), "g1")


def michelson_visibility(curve: CoherenceCurve, path_difference: float, calibration: float = 1.0) -> float:
    """Fringe visibility calibration * |g1(ds / c)|, interpolated on the curve."""
    if not 0 <= calibration <= 1:
        raise ValueError("calibration must lie in [0, 1]")
    tau = abs(path_difference) / SPEED_OF_LIGHT
    t = curve.taus
    if not t[0] <= tau <= t[-1]:
        raise ValueError(f"delay {tau:.3e} s outside the curve support [{t[0]:.3e}, {t[-1]:.3e}]")
    return calibration * abs(float(np.interp(tau, t, curve.values)))


def _trapz(y, x):
    return float(integrate.trapezoid(y, x))


@dataclass(frozen=True)
class ModeNumber:
    m_t: float
    raw_ratio: float
    tau_c: float
    tau_i: float
    reference_ratio: float

    def __float__(self) -> float:
        return self.m_t


def mode_number(g1: CoherenceCurve, intensity: CoherenceCurve, family: str = "two-sided-exponential") -> ModeNumber:
    """Temporal mode number from coherence and intensity widths.

    tau_c = int |g1|^2 dtau (g1 normalized to 1 at tau = 0) and
    tau_I = (int I)^2 / int I^2.  M_t is tau_I/tau_c divided by the same
    ratio for the transform-limited member of ``family``, so a pure
    wavepacket gives 1.  Curves are integrated over their own grids
    (one-sided g1 curves on tau >= 0 are mirrored).
    """
    if family not in REFERENCE_RATIO:
        raise ValueError(f"family must be one of {tuple(REFERENCE_RATIO)}")
    tg, vg = g1.taus, np.abs(g1.values)
    g0 = float(np.interp(0.0, tg, vg)) if tg[0] <= 0 <= tg[-1] else float("nan")
    if not g0 > 0:
        raise ValueError("g1 curve must include tau = 0 with a non-zero value")
    v2 = (vg / g0) ** 2
    tau_c = _trapz(v2, tg)
    if tg[0] >= 0:
        tau_c = 2 * tau_c
    ti, vi = intensity.taus, intensity.values
    s1, s2 = _trapz(vi, ti), _trapz(vi**2, ti)
    if not (tau_c > 0 and s1 > 0 and s2 > 0):
        raise ValueError("degenerate curve: zero width")
    tau_i = s1**2 / s2
    raw = tau_i / tau_c
    ref = REFERENCE_RATIO[family]
    return ModeNumber(raw / ref, raw, tau_c, tau_i, ref)


def overlap(f, g) -> float:
    """Normalized overlap int f g / sqrt(int f^2 int g^2) on a common grid (NaNs dropped)."""
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    ok = np.isfinite(f) & np.isfinite(g)
    f, g = f[ok], g[ok]
    den = math.sqrt(float(f @ f) * float(g @ g))
    if den == 0:
        raise ValueError("overlap of a zero curve is undefined")
    return float(f @ g) / den


def heralded_g2_factorization(g2_s: CoherenceCurve, g2_sas: CoherenceCurve, floor: float = 0.0) -> CoherenceCurve:
    """Pointwise g2_S / g2_SAS; points with g2_SAS <= floor are masked as NaN."""
    if g2_s.taus.shape != g2_sas.taus.shape or not np.allclose(g2_s.taus, g2_sas.taus, rtol=0, atol=1e-15):
        raise ValueError("curves must share a tau grid")
    den = g2_sas.values
    ok = den > floor
    vals = np.full(den.shape, np.nan)
    vals[ok] = g2_s.values[ok] / den[ok]
    return CoherenceCurve(g2_s.taus, vals, "g2", g2_s.bin_width, meta={"masked": int((~ok).sum())})


# ---------------------------------------------------------------- jitter and Siegert


def _gauss_conv_at(fun, x: float, kernel_sigma: float, support: float) -> float:
    if kernel_sigma <= 0:
        return float(fun(x))
    span = 12 * kernel_sigma
    lo, hi = x - span, x + span
    pdf = lambda u: math.exp(-0.5 * ((x - u) / kernel_sigma) ** 2) / (kernel_sigma * math.sqrt(2 * math.pi))
    pts = [p for p in (0.0,) if lo < p < hi]
    return integrate.quad(lambda u: fun(u) * pdf(u), lo, hi, points=pts or None, limit=400, epsabs=1e-13)[0]


def siegert_g2(model: WavepacketModel, tau) -> np.ndarray:
    return 1.0 + g1_from_wavepacket(model, tau) ** 2


def g2_peak_with_jitter(model: WavepacketModel, jitter_sigma: float) -> float:
    """Siegert g2 smeared by the two-detector jitter kernel (sigma*sqrt 2), at tau = 0."""
    if jitter_sigma < 0:
        raise ValueError("jitter_sigma must be non-negative")
    if jitter_sigma == 0:
        return 2.0
    k = math.sqrt(2.0) * jitter_sigma
    return 1.0 + _gauss_conv_at(lambda u: g1_from_wavepacket(model, u) ** 2, 0.0, k, model.coherence_time)


def calibrate_jitter(model: WavepacketModel, target_g2: float) -> float:
    """Single-detector jitter for which ``g2_peak_with_jitter`` equals ``target_g2``."""
    if not 1.0 < target_g2 < 2.0:
        raise ValueError("target must lie strictly between 1 and 2")
    f = lambda s: g2_peak_with_jitter(model, s) - target_g2
    hi = model.coherence_time
    while f(hi) > 0:
        hi *= 4
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-16, rtol=1e-12))


THERMAL_BANDWIDTH = 77e6
THERMAL_G2_OBSERVED = 1.95


@lru_cache(maxsize=None)
def calibrated_jitter() -> float:
    """Per-detector jitter implied by a 77 MHz Lorentzian thermal field measured at g2(0) = 1.95."""
    return calibrate_jitter(WavepacketModel.lorentzian(THERMAL_BANDWIDTH), THERMAL_G2_OBSERVED)


def _tick_triangle_nodes(n: int = 9):
    """Gauss-Legendre nodes/weights for the triangular kernel on [-1, 1] ticks."""
    x, w = np.polynomial.legendre.leggauss(n)
    # split at 0 so the kink of the triangle is a node boundary
    xs = np.concatenate([(x - 1) / 2, (x + 1) / 2])
    ws = np.concatenate([w / 2, w / 2]) * (1 - np.abs(xs))
    return xs, ws / ws.sum()


def g2_prediction(
    model: WavepacketModel,
    lags_ticks: np.ndarray,
    bin_width: int = 1,
    jitter_sigma: float = 0.0,
    tick: float = TICK_SECONDS,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Expected g2 per histogram bin for chaotic light on a tick grid.

    Includes the two-detector Gaussian jitter, the triangular kernel of
    rounding both times to ticks, and averaging over the integer lags of
    each centred bin (bin k covers [k*w - w//2, k*w - w//2 + w)).
    """
    lags = np.asarray(lags_ticks, dtype=float)
    ks = np.round((lags - (bin_width - 1) / 2 + bin_width // 2) / bin_width).astype(int)
    offsets = np.arange(bin_width) - bin_width // 2
    xs, ws = _tick_triangle_nodes()
    kern = math.sqrt(2.0) * jitter_sigma
    if kern > 0:
        gx, gw = np.polynomial.hermite_e.hermegauss(41)
        gw = gw / gw.sum()
    out = np.empty(lags.size)
    for i, k in enumerate(ks):
        ints = k * bin_width + offsets
        u = (ints[:, None] + xs[None, :]).ravel() * tick
        if kern > 0:
            v = g1_from_wavepacket(model, u[:, None] + kern * gx[None, :]) ** 2 @ gw
        else:
            v = g1_from_wavepacket(model, u) ** 2
        v = v.reshape(ints.size, xs.size) @ ws
        out[i] = 1.0 + amplitude * v.mean()
    return out


@dataclass(frozen=True)
class DeconvolutionFit:
    model: WavepacketModel
    amplitude: float
    residual_norm: float
    sigma_width: float
    n_points: int


class FitError(RuntimeError):
    def __init__(self, message: str, residual_norm: float = float("nan")):
        super().__init__(f"{message} (residual norm {residual_norm:.3g})")
        self.residual_norm = residual_norm


def _smeared_siegert(T: float, amp: float, taus: np.ndarray, kernel: float) -> np.ndarray:
    model = WavepacketModel.two_sided(T)
    if kernel <= 0:
        return 1.0 + amp * g1_from_wavepacket(model, taus) ** 2
    gx, gw = np.polynomial.hermite_e.hermegauss(61)
    gw = gw / gw.sum()
    return 1.0 + amp * (g1_from_wavepacket(model, taus[:, None] + kernel * gx[None, :]) ** 2 @ gw)


def deconvolve_intensity(curve: CoherenceCurve, jitter_sigma: float, min_bins: int = 20) -> DeconvolutionFit:
    """Fit 1 + a |g1(tau)|^2 (two-sided exponential) smeared by the jitter kernel.

    ``jitter_sigma`` is per detector; the g2 kernel is sqrt(2) wider.  The
    bunching amplitude ``a`` absorbs partial (multimode) contrast.  A curve
    without significant bunching is rejected.
    """
    taus, vals = curve.taus, curve.values
    ok = np.isfinite(vals)
    taus, vals = taus[ok], vals[ok]
    sig = curve.sigma[ok] if curve.sigma is not None else None
    if taus.size < min_bins:
        raise ValueError(f"need at least {min_bins} informative bins")
    excess = vals - 1.0
    noise = float(np.median(sig)) if sig is not None else float(np.std(excess[np.abs(taus) > 0.5 * np.abs(taus).max()]))
    if excess.max() <= max(3 * noise, 1e-6):
        raise FitError("no bunching: g2 is flat within noise", float(np.linalg.norm(excess)))
    kernel = math.sqrt(2.0) * jitter_sigma
    # initial width from the half-maximum crossing
    half = excess.max() / 2
    above = np.abs(taus[excess >= half])
    T0 = max(float(above.max()) / 0.7 if above.size else float(np.ptp(taus)) / 10, 1e-15)

    def resid(p):
        r = _smeared_siegert(p[0], p[1], taus, kernel) - vals
        return r / sig if sig is not None else r

    try:
        res = optimize.least_squares(
            resid,
            x0=[T0, min(max(excess.max(), 1e-3), 1.0)],
            bounds=([1e-15, 0.0], [np.inf, 1.0]),
            x_scale=[T0, 0.1],
            xtol=1e-12,
            ftol=1e-12,
        )
    except ValueError as exc:
        raise FitError(f"fit failed: {exc}") from exc
    rn = float(np.linalg.norm(res.fun))
    if not res.success or not np.isfinite(res.x).all():
        raise FitError("fit did not converge", rn)
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac)
        scale = 1.0 if sig is not None else rn**2 / max(taus.size - 2, 1)
        sw = float(math.sqrt(cov[0, 0] * scale))
    except np.linalg.LinAlgError:
        sw = float("nan")
    return DeconvolutionFit(WavepacketModel.two_sided(float(res.x[0])), float(res.x[1]), rn, sw, int(taus.size))


def fit_g1(curve: CoherenceCurve, family: str = "two-sided-exponential") -> tuple[WavepacketModel, float]:
    """Least-squares fit of c * g1_model(tau) to |g1| samples; returns (model, c)."""
    t, v = curve.taus, np.abs(curve.values)

    def f(tt, w, c):
        return c * g1_from_wavepacket(WavepacketModel(family, w), tt)

    w0 = float(np.interp(0.5 * v.max(), v[np.argsort(v)], np.abs(t)[np.argsort(v)])) or 1e-9
    (w, c), _ = optimize.curve_fit(f, t, v, p0=[max(w0, 1e-12), max(v.max(), 1e-3)], maxfev=20000)
    return WavepacketModel(family, abs(w)), float(c)


def fit_intensity(curve: CoherenceCurve, family: str = "two-sided-exponential") -> tuple[WavepacketModel, float]:
    """Fit c * I_model(t - t0) to an intensity envelope; returns (model, t0)."""
    t, v = curve.taus, curve.values
    t0 = float(t[np.argmax(v)])

    def f(tt, w, c, s):
        return c * WavepacketModel(family, abs(w)).intensity(tt - s)

    w0 = max(_trapz(v, t) / max(v.max(), 1e-300), 1e-12)
    (w, c, s), _ = optimize.curve_fit(f, t, v, p0=[w0, v.max(), t0], maxfev=20000)
    return WavepacketModel(family, abs(w)), float(s)
