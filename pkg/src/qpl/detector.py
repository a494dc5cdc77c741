"""SPAD click model: routing, efficiency, jitter, dark counts, dead time, quantization."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numba
import numpy as np

from .source import ANTI_STOKES, STOKES, EventSet
from .tags import ANTI_STOKES as CH_ANTI_STOKES
from .tags import STOKES_A, STOKES_B, TICK_SECONDS, TagStream, quantize


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 1.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_rate < 0 or self.jitter_sigma < 0 or self.dead_time < 0:
            raise ValueError("dark_rate, jitter_sigma and dead_time must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorParams":
        return cls(**data)


IDEAL = DetectorParams()


def dead_time_ticks(dead_time: float) -> int:
    """Smallest tick separation that honours the dead time exactly."""
    return int(math.ceil(dead_time / TICK_SECONDS - 1e-9))


@numba.njit(cache=True)
def _dead_time_mask(ticks, min_sep):
    keep = np.zeros(ticks.size, dtype=np.bool_)
    last = np.iinfo(np.int64).min
    for i in range(ticks.size):
        if ticks[i] - last >= min_sep or i == 0:
            keep[i] = True
            last = ticks[i]
    return keep


def apply_dead_time(ticks: np.ndarray, dead_time: float) -> np.ndarray:
    """Non-paralyzable dead time on a sorted tick array (first click wins)."""
    sep = dead_time_ticks(dead_time)
    if sep <= 0 or ticks.size < 2:
        return ticks
    return ticks[_dead_time_mask(np.ascontiguousarray(ticks, dtype=np.int64), sep)]


def route(events: EventSet, rng: np.random.Generator, signal_field: int = STOKES, split: float = 0.5) -> dict[int, np.ndarray]:
    """Send the signal field through a beamsplitter onto channels 0/1 and the herald field to channel 2.

    ``split`` is the probability of reaching channel 0.
    """
    herald_field = ANTI_STOKES if signal_field == STOKES else STOKES
    sig = events.times(signal_field)
    to_a = rng.random(sig.size) < split
    return {STOKES_A: sig[to_a], STOKES_B: sig[~to_a], CH_ANTI_STOKES: events.times(herald_field)}


def detect_channel(times: np.ndarray, params: DetectorParams, rng: np.random.Generator, duration: float):
    """Ticks of one detector and the number of clamped negative times."""
    t = np.asarray(times, dtype=float)
    if params.efficiency < 1:
        t = t[rng.random(t.size) < params.efficiency]
    if params.jitter_sigma > 0:
        t = t + rng.normal(0.0, params.jitter_sigma, t.size)
    if params.dark_rate > 0:
        n = rng.poisson(params.dark_rate * duration)
        t = np.concatenate([t, rng.uniform(0.0, duration, n)])
    clamped = int(np.count_nonzero(t < 0))
    if clamped:
        t = np.maximum(t, 0.0)
    ticks = np.sort(quantize(t), kind="stable")
    return apply_dead_time(ticks, params.dead_time), clamped


def detect(
    events: EventSet,
    detectors: Mapping[int, DetectorParams] | DetectorParams = IDEAL,
    seed: int = 0,
    signal_field: int = STOKES,
    split: float = 0.5,
    duration: float | None = None,
) -> TagStream:
    """Turn emission events into a merged, channel-labelled tag stream.

    Args:
        events: time-sorted emission events.
        detectors: one DetectorParams for all channels, or a mapping
            channel -> params (missing channels are ideal).
        seed: routing and each channel use independent derived streams, so
            results do not depend on processing order.
        signal_field: the field sent to the HBT pair (reverse heralding
            uses ``ANTI_STOKES``).
        duration: span for dark counts; defaults to ``events.duration``.

    Returns:
        TagStream whose meta records the number of jittered times clamped at 0.
    """
    if len(events) > 1 and np.any(np.diff(events.time) < 0):
        raise ValueError("events must be sorted by time")
    dur = events.duration if duration is None else duration
    ss = np.random.SeedSequence(seed)
    route_seq, *chan_seqs = ss.spawn(4)
    per_channel = route(events, np.random.default_rng(route_seq), signal_field, split)
    ticks = {}
    clamped = {}
    for ch, seq in zip(sorted(per_channel), chan_seqs):
        p = detectors if isinstance(detectors, DetectorParams) else detectors.get(ch, IDEAL)
        ticks[ch], clamped[ch] = detect_channel(per_channel[ch], p, np.random.default_rng(seq), dur)
    meta = {"clamped": clamped, "duration": dur, "clamped_total": sum(clamped.values())}
    return TagStream.merge(ticks, meta)
