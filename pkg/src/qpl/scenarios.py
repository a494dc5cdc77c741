"""Scenario configs, end-to-end pipelines, run manifests and replay."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .coherence import (
    CoherenceCurve,
    WavepacketModel,
    deconvolve_intensity,
    fit_g1,
    g1_from_wavepacket,
    g2_peak_with_jitter,
    g2_prediction,
    mode_number,
    overlap,
)
from .csvio import write_table
from .detector import DetectorParams, detect
from .engine import (
    centered_delay,
    coincidence_rate,
    cross_correlate,
    heralded_autocorrelation,
    heralded_hbt,
    merge_streams,
    window_scan,
)
from .estimators import alpha, click_probs, estimate_state, eta_2ph, propagate_sigma, witness_d
from .presets import detector_preset, source_preset
from .qng import loss_trajectory, nsr_threshold, qng_criterion, qng_depth_loss, thermal_trajectory
from .source import SourceParams, antistokes_transmission, effective_rates, generate_events, geometry_overlap
from .tags import ANTI_STOKES as CH_HERALD
from .tags import STOKES_A, STOKES_B, TICK_SECONDS, TagStream

OUT_ENV = "QPL_OUT_DIR"

DEFAULTS = {
    "qng-plane": {
        "duration": 3.0,
        "window_grid_ticks": [10, 30, 50, 70, 90, 110, 130, 150, 170, 190],
        "g2_bin_ticks": 6,
        "t_splitter": 0.9,
        "nsr_convention": "post",
        "occupancy": 1.0,
        "loss_grid": [1.0 - 0.05 * k for k in range(20)],
        "thermal_means": [0.005 * k for k in range(21)],
    },
    "scan-d": {
        "duration": 1.0,
        "d_grid_mm": [-40.0 + 5.0 * k for k in range(11)],
        "window_ticks": 70,
        "g2_bin_ticks": 6,
    },
    "coherence": {
        "thermal_rate": 2.0e7,
        "thermal_duration": 0.25,
        "thermal_range_ticks": 150,
        "heralded_duration": 4.0,
        "window_ticks": 70,
        "factorization_bin_ticks": 12,
        "factorization_range_ticks": 360,
        "mode_number_target": 1.43,
        "michelson_calibration": 0.97,
        "michelson_max_path_m": 4.0,
        "michelson_points": 41,
        "michelson_noise": 0.01,
        "g2s_noise": 0.01,
        "g2s_range_ticks": 300,
    },
    "scan-power": {
        "duration": 1.0,
        "powers": [0.25, 0.5, 1.0, 2.0, 4.0],
        "signal_exponent": 1.0,
        "noise_exponent": 2.0,
        "saturation_power": 4.0,
        "window_ticks": 70,
    },
}
SCENARIOS = tuple(DEFAULTS)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """Validated scenario description.

    ``source`` and ``detectors`` are a preset name or a mapping with an
    optional ``preset`` key plus overrides.  Detector overrides are keyed by
    channel id or ``"all"``.
    """

    scenario: str
    seed: int
    source: object = "reference"
    detectors: object = "reference"
    analysis: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in DEFAULTS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; known: {', '.join(SCENARIOS)}")
        if self.seed is None:
            raise ConfigError("a seed is required")
        self.seed = int(self.seed)
        unknown = set(self.analysis) - set(DEFAULTS[self.scenario])
        if unknown:
            raise ConfigError(f"unknown analysis keys for {self.scenario}: {sorted(unknown)}")
        # resolve early so bad presets fail at load time
        try:
            self.source_params()
            self.detector_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        allowed = {"scenario", "seed", "source", "detectors", "analysis"}
        extra = set(data) - allowed
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "scenario" not in data:
            raise ConfigError("config must name a scenario")
        return cls(
            data["scenario"],
            data.get("seed"),
            data.get("source", "reference"),
            data.get("detectors", "reference"),
            dict(data.get("analysis", {})),
        )

    @classmethod
    def load(cls, path: str | os.PathLike, **overrides) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "source": copy.deepcopy(self.source),
            "detectors": copy.deepcopy(self.detectors),
            "analysis": dict(self.analysis),
        }

    def options(self) -> dict:
        return {**DEFAULTS[self.scenario], **self.analysis}

    def source_params(self) -> SourceParams:
        if isinstance(self.source, str):
            return source_preset(self.source)
        spec = dict(self.source)
        base = source_preset(spec.pop("preset")) if "preset" in spec else SourceParams()
        return base.with_(**spec)

    def detector_params(self) -> dict[int, DetectorParams]:
        if isinstance(self.detectors, str):
            return detector_preset(self.detectors)
        spec = dict(self.detectors)
        dets = detector_preset(spec.pop("preset")) if "preset" in spec else detector_preset("ideal")
        if "all" in spec:
            common = spec.pop("all")
            dets = {c: DetectorParams(**{**d.to_dict(), **common}) for c, d in dets.items()}
        for key, over in spec.items():
            c = int(key)
            dets[c] = DetectorParams(**{**dets.get(c, DetectorParams()).to_dict(), **over})
        return dets


def config_hash(config: ScenarioConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- pipeline helpers


def simulate_tags(params: SourceParams, detectors, duration: float, seed: int, threads: int = 1) -> TagStream:
    events = generate_events(params, duration, derive_seed(seed, 0), threads=threads)
    return detect(events, detectors, derive_seed(seed, 1))


@dataclass(frozen=True)
class HeraldedSummary:
    duration: float
    peak: int
    m_s: float
    m_as: float
    coincidence: float
    g2_sas_zero: float
    eta_2ph: float
    counts: object
    state: object


def analyze_heralded(tags: TagStream, duration: float, window: int, g2_bin: int = 6, threads: int = 1) -> HeraldedSummary:
    """Peak-centred heralded analysis: rates, g2_SAS(0), eta_2ph and the state estimate."""
    a, b, h = tags.ticks(STOKES_A), tags.ticks(STOKES_B), tags.ticks(CH_HERALD)
    s = merge_streams(a, b)
    hist = cross_correlate(h, s, g2_bin, 2000, duration=duration, shards=4, threads=threads)
    peak = hist.peak_lag() if hist.counts.any() else 0
    # one bin of width g2_bin centred on the correlation peak
    at_peak = cross_correlate(h, s - peak, g2_bin, 0, duration=duration)
    c_bin = int(at_peak.counts[0])
    acc_bin = at_peak.accidental_level()
    delay = centered_delay(peak, window)
    raw, acc = coincidence_rate(h, s, window, delay, duration)
    counts = heralded_hbt(h, a, b, window, delay)
    state = estimate_state(click_probs(counts), warn=False) if counts.n_heralds else None
    return HeraldedSummary(
        duration,
        peak,
        s.size / duration,
        h.size / duration,
        c_bin / duration,
        c_bin / acc_bin if acc_bin > 0 else math.nan,
        eta_2ph(raw, h.size / duration, acc) if h.size else 0.0,
        counts,
        state,
    )


# ---------------------------------------------------------------- scenarios


def _qng_plane(cfg: ScenarioConfig, threads: int) -> dict:
    o = cfg.options()
    params, dets = cfg.source_params(), cfg.detector_params()
    dur = float(o["duration"])
    tags = simulate_tags(params, dets, dur, cfg.seed, threads)
    base = analyze_heralded(tags, dur, 70, int(o["g2_bin_ticks"]), threads)
    a, b, h = tags.ticks(STOKES_A), tags.ticks(STOKES_B), tags.ticks(CH_HERALD)
    grid = np.asarray(o["window_grid_ticks"], dtype=np.int64)
    scan = window_scan(h, a, b, grid * TICK_SECONDS, base.peak)
    counts = scan.counts[scan.best_index]
    state = estimate_state(click_probs(counts), warn=False)
    verdict = qng_criterion(state)
    depth = qng_depth_loss(state)
    t = float(o["t_splitter"])
    conv = o["nsr_convention"]
    occ = float(o["occupancy"])
    try:
        nsr = nsr_threshold(state, t=t, convention=conv, occupancy=occ)
        nsr_val, nsr_mu = nsr.nsr, nsr.thermal_mean
    except ValueError:
        nsr_val, nsr_mu = math.nan, math.nan
    loss = loss_trajectory(state, o["loss_grid"])
    therm = thermal_trajectory(state, o["thermal_means"], t=t, convention=conv, occupancy=occ)
    pred = effective_rates(params, int(o["g2_bin_ticks"]) * TICK_SECONDS, dets, eta_window=int(scan.best_window) * TICK_SECONDS)
    meta = {"scenario": "qng-plane", "seed": cfg.seed, "duration_s": dur, "tick_s": TICK_SECONDS}
    return {
        "point.csv": (
            {
                "window_ticks": scan.best_window,
                "window_s": scan.best_window * TICK_SECONDS,
                "n_heralds": counts.n_heralds,
                "n_a": counts.n_a,
                "n_b": counts.n_b,
                "n_ab": counts.n_ab,
                "p0": state.p0,
                "p1": state.p1,
                "p2plus": state.p2plus,
                "sigma_p1": state.sigma_p1,
                "sigma_p2plus": state.sigma_p2plus,
                "margin": verdict.margin,
                "sigma_margin": verdict.sigma_margin,
                "is_qng": verdict.is_qng,
                "eta_2ph": base.eta_2ph,
                "g2_sas_zero": base.g2_sas_zero,
                "predicted_eta_2ph": pred.eta_2ph,
                "predicted_g2_sas_zero": pred.g2_sas_zero,
            },
            meta,
        ),
        "summary.csv": (
            {
                "depth": depth.depth,
                "closed_form_depth": depth.closed_form_depth,
                "worst_case_depth": depth.worst_case_depth,
                "nsr_threshold": nsr_val,
                "nsr_thermal_mean": nsr_mu,
                "t_splitter": t,
                "nsr_convention": conv,
            },
            meta,
        ),
        "window_scan.csv": (
            {
                "window_ticks": scan.windows,
                "window_s": scan.windows * TICK_SECONDS,
                "objective": scan.objective,
                "n_heralds": [c.n_heralds for c in scan.counts],
                "n_a": [c.n_a for c in scan.counts],
                "n_b": [c.n_b for c in scan.counts],
                "n_ab": [c.n_ab for c in scan.counts],
            },
            {**meta, "delay_peak_ticks": base.peak},
        ),
        "loss_trajectory.csv": (_trajectory_columns(loss), {**meta, "control": "transmission"}),
        "thermal_trajectory.csv": (_trajectory_columns(therm), {**meta, "control": "thermal_mean", "t_splitter": t}),
    }


def _trajectory_columns(points) -> dict:
    return {
        "control": [p.control for p in points],
        "p1": [p.p1 for p in points],
        "p2plus": [p.p2plus for p in points],
        "margin": [p.margin for p in points],
        "nsr": [p.nsr for p in points],
    }


def _scan_d(cfg: ScenarioConfig, threads: int) -> dict:
    o = cfg.options()
    base_params, dets = cfg.source_params(), cfg.detector_params()
    dur, w, gb = float(o["duration"]), int(o["window_ticks"]), int(o["g2_bin_ticks"])
    rows = {k: [] for k in (
        "d_mm", "overlap", "as_transmission", "m_s", "m_as", "coincidence", "g2_sas_zero", "eta_2ph",
        "p1", "p2plus", "sigma_p1", "sigma_p2plus", "margin", "sigma_margin", "is_qng",
        "predicted_m_s", "predicted_m_as", "predicted_g2_sas_zero", "predicted_eta_2ph",
    )}
    for i, d_mm in enumerate(o["d_grid_mm"]):
        p = base_params.with_(d=float(d_mm) * 1e-3)
        tags = simulate_tags(p, dets, dur, derive_seed(cfg.seed, 100 + i), threads)
        r = analyze_heralded(tags, dur, w, gb, threads)
        pred = effective_rates(p, gb * TICK_SECONDS, dets, eta_window=w * TICK_SECONDS)
        v = qng_criterion(r.state)
        vals = (
            d_mm, geometry_overlap(p.d, p.interaction_fwhm, p.cell_length),
            antistokes_transmission(p.d, p.interaction_fwhm, p.absorption_coeff, p.cell_length),
            r.m_s, r.m_as, r.coincidence, r.g2_sas_zero, r.eta_2ph,
            r.state.p1, r.state.p2plus, r.state.sigma_p1, r.state.sigma_p2plus, v.margin, v.sigma_margin, v.is_qng,
            pred.m_s, pred.m_as, pred.g2_sas_zero, pred.eta_2ph,
        )
        for k, x in zip(rows, vals):
            rows[k].append(x)
    meta = {"scenario": "scan-d", "seed": cfg.seed, "duration_s": dur, "window_ticks": w, "g2_bin_ticks": gb}
    return {"scan_d.csv": (rows, meta)}


def _coherence(cfg: ScenarioConfig, threads: int) -> dict:
    o = cfg.options()
    dets = cfg.detector_params()
    jitter = dets[STOKES_A].jitter_sigma
    out = {}
    meta = {"scenario": "coherence", "seed": cfg.seed}

    # thermal reference: Siegert bunching observed through jittery detectors
    lorentz = WavepacketModel.lorentzian(77e6)
    thermal = SourceParams(noise_rate_s=float(o["thermal_rate"]), noise_kind="thermal", noise_coherence_time=lorentz.coherence_time)
    tdur = float(o["thermal_duration"])
    # jitter only: at these rates dead time would eat into the bunching peak
    jdet = {c: DetectorParams(jitter_sigma=dets[c].jitter_sigma) for c in (STOKES_A, STOKES_B)}
    ttags = simulate_tags(thermal, jdet, tdur, derive_seed(cfg.seed, 1), threads)
    th = cross_correlate(ttags.ticks(0), ttags.ticks(1), 1, int(o["thermal_range_ticks"]), duration=tdur)
    pred = g2_prediction(lorentz, th.lags, 1, jitter)
    out["thermal_g2.csv"] = (
        {"tau_s": th.taus, "g2": th.g2(), "sigma": th.g2_sigma(), "siegert_prediction": pred},
        {**meta, "bin_width_s": TICK_SECONDS, "jitter_sigma_s": jitter, "coherence_time_s": lorentz.coherence_time},
    )

    # heralded g2: direct measurement against the g2_S / g2_SAS factorization
    params = cfg.source_params()
    hdur = float(o["heralded_duration"])
    tags = simulate_tags(params, dets, hdur, derive_seed(cfg.seed, 2), threads)
    a, b, h = tags.ticks(STOKES_A), tags.ticks(STOKES_B), tags.ticks(CH_HERALD)
    s = merge_streams(a, b)
    peak = cross_correlate(h, s, 6, 2000, duration=hdur).peak_lag()
    w, bw, rng_ = int(o["window_ticks"]), int(o["factorization_bin_ticks"]), int(o["factorization_range_ticks"])
    direct = heralded_autocorrelation(h, a, b, w, centered_delay(peak, w), bw, rng_)
    g2s = cross_correlate(a, b, bw, rng_, duration=hdur)
    g2sas = cross_correlate(h, s - peak, bw, rng_, duration=hdur)
    ratio = g2s.g2() / np.where(g2sas.g2() > 0, g2sas.g2(), np.nan)
    ov = overlap(direct.g2, ratio)
    out["factorization.csv"] = (
        {"tau_s": direct.taus, "g2_heralded_direct": direct.g2, "g2_s": g2s.g2(), "g2_sas": g2sas.g2(), "ratio": ratio},
        {**meta, "bin_width_s": bw * TICK_SECONDS, "overlap": ov},
    )

    # mode number from synthetic Michelson visibilities and a deconvolved g2_S
    rng = np.random.default_rng(derive_seed(cfg.seed, 3))
    T_env = 2 * params.wavepacket_tau
    T_g1 = T_env / float(o["mode_number_target"])
    cal = float(o["michelson_calibration"])
    ds = np.linspace(0.0, float(o["michelson_max_path_m"]), int(o["michelson_points"]))
    taus = ds / 299_792_458.0
    vis = np.clip(cal * g1_from_wavepacket(WavepacketModel.two_sided(T_g1), taus) + rng.normal(0, float(o["michelson_noise"]), taus.size), 0, 1)
    g1_model, g1_scale = fit_g1(CoherenceCurve(taus, vis, "g1"))
    lags = np.arange(-int(o["g2s_range_ticks"]), int(o["g2s_range_ticks"]) + 1, 3).astype(float)
    env_model = WavepacketModel.two_sided(T_env)
    g2_env = g2_prediction(env_model, lags, 1, jitter) + rng.normal(0, float(o["g2s_noise"]), lags.size)
    fit = deconvolve_intensity(
        CoherenceCurve(lags * TICK_SECONDS, g2_env, "g2", TICK_SECONDS, np.full(lags.size, float(o["g2s_noise"]))), jitter
    )
    grid = np.linspace(-30 * T_env, 30 * T_env, 24001)
    mt = mode_number(
        CoherenceCurve(grid, g1_from_wavepacket(g1_model, grid), "g1"),
        CoherenceCurve(grid, fit.model.intensity(grid), "intensity"),
    )
    out["michelson.csv"] = (
        {"path_difference_m": ds, "tau_s": taus, "visibility": vis, "fit": g1_scale * g1_from_wavepacket(g1_model, taus)},
        {**meta, "calibration": cal, "fitted_g1_width_s": g1_model.width},
    )
    out["g2_s_deconvolution.csv"] = (
        {"tau_s": lags * TICK_SECONDS, "g2": g2_env, "fit": g2_prediction(fit.model, lags, 1, jitter, amplitude=fit.amplitude)},
        {**meta, "fitted_width_s": fit.model.width, "residual_norm": fit.residual_norm, "jitter_sigma_s": jitter},
    )
    out["summary.csv"] = (
        {
            "g2_peak_with_jitter": g2_peak_with_jitter(lorentz, jitter),
            "thermal_g2_zero": float(th.g2()[th.counts.size // 2]),
            "factorization_overlap": ov,
            "mode_number": mt.m_t,
            "raw_width_ratio": mt.raw_ratio,
            "tau_c_s": mt.tau_c,
            "tau_i_s": mt.tau_i,
            "envelope_width_s": fit.model.width,
            "g1_width_s": g1_model.width,
        },
        meta,
    )
    return out


def _scan_power(cfg: ScenarioConfig, threads: int) -> dict:
    o = cfg.options()
    base, dets = cfg.source_params(), cfg.detector_params()
    dur, w = float(o["duration"]), int(o["window_ticks"])
    a_sig, a_noise, p_sat = float(o["signal_exponent"]), float(o["noise_exponent"]), float(o["saturation_power"])
    cols = {k: [] for k in (
        "power", "pair_rate", "noise_rate_s", "noise_rate_as", "m_s", "m_as", "eta_2ph",
        "p1", "p2plus", "sigma_p1", "sigma_p2plus", "alpha", "sigma_alpha", "witness_d", "sigma_witness_d", "margin", "is_qng",
    )}
    for i, pw in enumerate(o["powers"]):
        pw = float(pw)
        sat = 1.0 / (1.0 + pw / p_sat) if p_sat > 0 else 1.0
        sat1 = 1.0 / (1.0 + 1.0 / p_sat) if p_sat > 0 else 1.0
        p = base.with_(
            pair_rate=base.pair_rate * pw**a_sig * sat / sat1,
            noise_rate_s=base.noise_rate_s * pw**a_noise,
            noise_rate_as=base.noise_rate_as * pw**a_noise,
        )
        tags = simulate_tags(p, dets, dur, derive_seed(cfg.seed, 200 + i), threads)
        r = analyze_heralded(tags, dur, w, 6, threads)
        cp = click_probs(r.counts)
        try:
            al, sal = alpha(cp), propagate_sigma(alpha, cp)
        except ValueError:
            al, sal = math.nan, math.nan
        v = qng_criterion(r.state)
        for k, x in zip(cols, (
            pw, p.pair_rate, p.noise_rate_s, p.noise_rate_as, r.m_s, r.m_as, r.eta_2ph,
            r.state.p1, r.state.p2plus, r.state.sigma_p1, r.state.sigma_p2plus,
            al, sal, witness_d(cp), propagate_sigma(witness_d, cp), v.margin, v.is_qng,
        )):
            cols[k].append(x)
    meta = {
        "scenario": "scan-power",
        "seed": cfg.seed,
        "duration_s": dur,
        "signal_model": f"pair_rate ~ P^{a_sig} / (1 + P/{p_sat})",
        "noise_model": f"noise ~ P^{a_noise}",
    }
    return {"scan_power.csv": (cols, meta)}


RUNNERS = {"qng-plane": _qng_plane, "scan-d": _scan_d, "coherence": _coherence, "scan-power": _scan_power}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def environment_versions() -> dict:
    return {
        "qpl": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def run_scenario(config: ScenarioConfig, out_dir: str | os.PathLike | None = None, threads: int = 1) -> Path:
    """Run a scenario and write its CSV artifacts plus ``manifest.json``.

    Outputs depend only on the config (including its seed); ``threads``
    changes speed, never results.
    """
    out = Path(out_dir if out_dir is not None else os.environ.get(OUT_ENV, "qpl-out")) / config.scenario
    out.mkdir(parents=True, exist_ok=True)
    tables = RUNNERS[config.scenario](config, max(1, int(threads)))
    hashes = {}
    for name in sorted(tables):
        cols, meta = tables[name]
        write_table(out / name, cols, meta)
        hashes[name] = _sha256(out / name)
    manifest = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "outputs": hashes,
        "scenario": config.scenario,
        "seed": config.seed,
        "versions": environment_versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


@dataclass(frozen=True)
class ReplayResult:
    identical: bool
    mismatched: list
    out_dir: Path


def replay(manifest_path: str | os.PathLike, out_dir: str | os.PathLike | None = None, threads: int = 1) -> ReplayResult:
    """Re-run the config stored in a manifest and compare output hashes."""
    manifest = json.loads(Path(manifest_path).read_text())
    cfg = ScenarioConfig.from_dict(manifest["config"])
    if config_hash(cfg) != manifest["config_hash"]:
        raise ConfigError("manifest config does not match its recorded hash")
    target = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="qpl-replay-"))
    new_dir = run_scenario(cfg, target, threads)
    new = json.loads((new_dir / "manifest.json").read_text())["outputs"]
    old = manifest["outputs"]
    bad = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    return ReplayResult(not bad, bad, new_dir)
