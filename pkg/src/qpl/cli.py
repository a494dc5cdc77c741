"""Command-line entry point: ``qpl <command> [options]``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .csvio import format_table
from .detector import detect
from .engine import centered_delay, cross_correlate, find_delay, heralded_hbt, merge_streams
from .estimators import click_probs, estimate_state
from .photon_stats import StateModel
from .presets import REFERENCE_WINDOW, SOURCES, detector_preset, source_preset
from .qng import nsr_threshold, qng_criterion, qng_depth_loss
from .scenarios import OUT_ENV, SCENARIOS, ConfigError, ScenarioConfig, replay, run_scenario
from .source import EventSet, SourceParams, generate_events
from .tags import ANTI_STOKES, STOKES_A, STOKES_B, TagFileError, read_tags, to_ticks, write_tags


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV, "qpl-out"))


def _source_from_args(args) -> SourceParams:
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        spec = cfg.get("source", cfg)
        if isinstance(spec, str):
            return source_preset(spec)
        spec = dict(spec)
        base = source_preset(spec.pop("preset")) if "preset" in spec else SourceParams()
        return base.with_(**spec)
    return source_preset(args.source)


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def cmd_simulate(args) -> int:
    params = _source_from_args(args)
    ev = generate_events(params, args.duration, args.seed, threads=args.threads)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "events.npz"
    ev.save(path)
    print(f"{len(ev)} events over {args.duration:g} s -> {path}")
    return 0


def cmd_detect(args) -> int:
    ev = EventSet.load(args.events)
    tags = detect(ev, detector_preset(args.detectors), args.seed)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "tags.qtag"
    write_tags(path, tags)
    counts = {c: int(tags.ticks(c).size) for c in (STOKES_A, STOKES_B, ANTI_STOKES)}
    print(f"clicks per channel {counts} -> {path}")
    return 0


def cmd_correlate(args) -> int:
    tags = read_tags(args.tags)
    a = tags.ticks(args.a)
    b = merge_streams(*(tags.ticks(c) for c in args.b))
    h = cross_correlate(a, b, args.bin, args.range, duration=args.duration, shards=args.threads, threads=args.threads)
    text = format_table(
        {"lag_ticks": h.lags, "tau_s": h.taus, "counts": h.counts, "g2": h.g2(), "sigma": h.g2_sigma()},
        {"channel_a": args.a, "channel_b": " ".join(map(str, args.b)), "bin_ticks": args.bin, "duration_s": h.duration},
    )
    _emit(text, Path(args.out) / "correlation.csv" if args.out else None)
    return 0


def cmd_estimate(args) -> int:
    tags = read_tags(args.tags)
    h, a, b = tags.ticks(ANTI_STOKES), tags.ticks(STOKES_A), tags.ticks(STOKES_B)
    window = to_ticks(args.window)
    delay = args.delay if args.delay is not None else centered_delay(find_delay(h, merge_streams(a, b)), window)
    counts = heralded_hbt(h, a, b, window, delay)
    cp = click_probs(counts)
    state = estimate_state(cp)
    v = qng_criterion(state)
    text = format_table(
        {
            "n_heralds": counts.n_heralds,
            "n_a": counts.n_a,
            "n_b": counts.n_b,
            "n_ab": counts.n_ab,
            "p1": state.p1,
            "p2plus": state.p2plus,
            "sigma_p1": state.sigma_p1,
            "sigma_p2plus": state.sigma_p2plus,
            "clipped": state.clipped,
            "is_qng": v.is_qng,
            "margin": v.margin,
        },
        {"window_ticks": window, "delay_ticks": delay},
    )
    _emit(text, Path(args.out) / "estimate.csv" if args.out else None)
    return 0


def cmd_qng(args) -> int:
    state = StateModel.from_p1_p2(args.p1, args.p2, args.sigma_p1, args.sigma_p2)
    v = qng_criterion(state)
    depth = qng_depth_loss(state)
    try:
        nsr = nsr_threshold(state, t=args.t, convention=args.convention).nsr
    except ValueError:
        nsr = math.nan
    text = format_table(
        {
            "p1": state.p1,
            "p2plus": state.p2plus,
            "is_qng": v.is_qng,
            "margin": v.margin,
            "sigma_margin": v.sigma_margin,
            "depth": depth.depth,
            "closed_form_depth": depth.closed_form_depth,
            "nsr_threshold": nsr,
        },
        {"t_splitter": args.t, "nsr_convention": args.convention},
    )
    _emit(text, Path(args.out) / "qng.csv" if args.out else None)
    return 0


def _run(cfg: ScenarioConfig, args) -> int:
    out = run_scenario(cfg, _out_dir(args), args.threads)
    print(f"{cfg.scenario} (seed {cfg.seed}) -> {out}")
    return 0


def _config(args, scenario: str | None) -> ScenarioConfig:
    if args.config:
        return ScenarioConfig.load(args.config, seed=args.seed, scenario=scenario)
    if scenario is None:
        raise ConfigError("give --config or --scenario")
    if args.seed is None:
        raise ConfigError("--seed is required without a config file")
    return ScenarioConfig(scenario, args.seed)


def cmd_coherence(args) -> int:
    return _run(_config(args, "coherence"), args)


def cmd_run(args) -> int:
    if args.replay:
        res = replay(args.replay, args.out, args.threads)
        if res.identical:
            print(f"replay identical -> {res.out_dir}")
            return 0
        print(f"replay differs in: {', '.join(res.mismatched)}", file=sys.stderr)
        return 1
    return _run(_config(args, args.scenario), args)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qpl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./qpl-out)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, required=seed_required)

    s = sub.add_parser("simulate", help="generate emission events")
    common(s, seed_required=True)
    s.add_argument("--source", default="reference", choices=sorted(SOURCES))
    s.add_argument("--config", help="JSON with a 'source' entry (preset name or overrides)")
    s.add_argument("--duration", type=float, default=0.1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", help="apply detector models to an event file")
    common(s, seed_required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--detectors", default="reference")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("correlate", help="cross-correlation histogram of two channels")
    common(s)
    s.add_argument("--tags", required=True)
    s.add_argument("--a", type=int, default=ANTI_STOKES)
    s.add_argument("--b", type=int, nargs="+", default=[STOKES_A, STOKES_B])
    s.add_argument("--bin", type=int, default=6, help="bin width in ticks")
    s.add_argument("--range", type=int, default=600, help="half range in ticks")
    s.add_argument("--duration", type=float, help="acquisition time in s (default: tag span)")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("estimate", help="heralded HBT counts and photon-number estimate")
    common(s)
    s.add_argument("--tags", required=True)
    s.add_argument("--window", type=float, default=REFERENCE_WINDOW, help="herald window in s")
    s.add_argument("--delay", type=int, help="window start after the herald, ticks (default: centred on the peak)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("qng", help="QNG verdict, loss depth and noise threshold for (P1, P2+)")
    common(s)
    s.add_argument("--p1", type=float, required=True)
    s.add_argument("--p2", type=float, required=True)
    s.add_argument("--sigma-p1", type=float, default=0.0)
    s.add_argument("--sigma-p2", type=float, default=0.0)
    s.add_argument("--t", type=float, default=0.9, help="splitter transmission")
    s.add_argument("--convention", choices=("post", "pre"), default="post")
    s.set_defaults(func=cmd_qng)

    s = sub.add_parser("coherence", help="run the coherence scenario")
    common(s)
    s.add_argument("--config")
    s.set_defaults(func=cmd_coherence)

    s = sub.add_parser("run", help="run a scenario from a config, or replay a manifest")
    common(s)
    s.add_argument("--config")
    s.add_argument("--scenario", choices=SCENARIOS)
    s.add_argument("--replay", metavar="MANIFEST")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TagFileError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"qpl: error: {exc}", file=sys.stderr)
        return 2
