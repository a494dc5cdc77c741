"""Single-pass time-tag correlation engine.

All stream arguments are sorted ``int64`` arrays of tick indices (81 ps per
tick).  Windows, delays, bin widths and ranges are integer ticks unless a
function says otherwise.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .tags import TICK_SECONDS, to_ticks


@dataclass(frozen=True)
class CorrelationHistogram:
    """Coincidence histogram of t_b - t_a.

    Bin k (k = -K..K) collects integer differences in
    [k*w - w//2, k*w - w//2 + w).  The normalized g2 is derived on demand.
    """

    bin_width: int
    range: int
    counts: np.ndarray
    n_a: int
    n_b: int
    duration: float

    @property
    def rate_a(self) -> float:
        return self.n_a / self.duration

    @property
    def rate_b(self) -> float:
        return self.n_b / self.duration

    @property
    def lags(self) -> np.ndarray:
        """Mean integer lag of each bin, in ticks."""
        k = np.arange(self.counts.size) - self.counts.size // 2
        return k * self.bin_width - self.bin_width // 2 + (self.bin_width - 1) / 2

    @property
    def taus(self) -> np.ndarray:
        return self.lags * TICK_SECONDS

    def accidental_level(self) -> float:
        """Expected counts per bin for uncorrelated streams."""
        return self.n_a * self.n_b * self.bin_width * TICK_SECONDS / self.duration

    def g2(self) -> np.ndarray:
        return self.counts / self.accidental_level()

    def g2_sigma(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.counts, 1)) / self.accidental_level()

    def peak_lag(self) -> int:
        """Lag (ticks) of the most populated bin; ties resolve to the smallest |lag|."""
        lags = self.lags
        best = np.flatnonzero(self.counts == self.counts.max())
        return int(round(lags[best[np.argmin(np.abs(lags[best]))]]))


@dataclass(frozen=True)
class HbtCounts:
    n_heralds: int
    n_a: int
    n_b: int
    n_ab: int
    window: int
    delay: int

    def __post_init__(self):
        if not (0 <= self.n_ab <= min(self.n_a, self.n_b) and max(self.n_a, self.n_b) <= self.n_heralds):
            raise ValueError(f"inconsistent HBT counts {self}")


@dataclass(frozen=True)
class WindowScan:
    best_window: int
    windows: np.ndarray
    objective: np.ndarray
    counts: list = field(repr=False)

    @property
    def best_index(self) -> int:
        return int(np.flatnonzero(self.windows == self.best_window)[0])


@dataclass(frozen=True)
class HeraldedG2:
    """Herald-conditioned autocorrelation of the two HBT arms versus t_b - t_a."""

    lags: np.ndarray
    numerator: np.ndarray
    expected: np.ndarray

    @property
    def taus(self) -> np.ndarray:
        return self.lags * TICK_SECONDS

    @property
    def g2(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.expected > 0, self.numerator / self.expected, np.nan)


def _as_stream(x, name="stream") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size > 1 and np.any(arr[1:] < arr[:-1]):
        raise ValueError(f"{name} is not sorted")
    return arr


def _span_seconds(*streams) -> float:
    lo = min((s[0] for s in streams if s.size), default=0)
    hi = max((s[-1] for s in streams if s.size), default=0)
    return max(hi - lo + 1, 1) * TICK_SECONDS


@numba.njit(nogil=True, cache=True)
def _xcorr_kernel(a, b, lo, w, nbins, i0, i1, hist):
    hi = lo + nbins * w
    nb = b.size
    if i0 >= i1:
        return
    j0 = np.searchsorted(b, a[i0] + lo)
    for i in range(i0, i1):
        ai = a[i]
        while j0 < nb and b[j0] < ai + lo:
            j0 += 1
        j = j0
        while j < nb and b[j] < ai + hi:
            hist[(b[j] - ai - lo) // w] += 1
            j += 1


@numba.njit(cache=True)
def _xcorr_bruteforce(a, b, lo, w, nbins, hist):
    hi = lo + nbins * w
    for i in range(a.size):
        for j in range(b.size):
            d = b[j] - a[i]
            if d >= lo and d < hi:
                hist[(d - lo) // w] += 1


def _shard_bounds(a: np.ndarray, shards: int) -> list[tuple[int, int]]:
    if a.size == 0 or shards <= 1:
        return [(0, a.size)]
    edges = np.linspace(a[0], a[-1] + 1, shards + 1)
    idx = np.searchsorted(a, edges[1:-1], side="left")
    bounds = np.concatenate(([0], idx, [a.size]))
    return [(int(bounds[k]), int(bounds[k + 1])) for k in range(shards)]


def _bins(bin_width: int, range_: int) -> tuple[int, int]:
    if bin_width <= 0 or range_ < 0:
        raise ValueError("bin_width must be positive and range non-negative")
    k = range_ // bin_width
    nbins = 2 * k + 1
    lo = -k * bin_width - bin_width // 2
    return lo, nbins


def cross_correlate(
    tags_a,
    tags_b,
    bin_width: int,
    range_: int,
    duration: float | None = None,
    shards: int = 1,
    threads: int = 1,
) -> CorrelationHistogram:
    """Histogram of t_b - t_a over +-range ticks in one pass over the streams.

    ``shards`` splits stream a into time slices that are processed
    independently (optionally on ``threads`` workers) and summed; the result
    does not depend on either setting.
    """
    a = _as_stream(tags_a, "tags_a")
    b = _as_stream(tags_b, "tags_b")
    lo, nbins = _bins(int(bin_width), int(range_))
    bounds = _shard_bounds(a, max(1, int(shards)))

    def run(bd):
        h = np.zeros(nbins, dtype=np.int64)
        _xcorr_kernel(a, b, lo, int(bin_width), nbins, bd[0], bd[1], h)
        return h

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(bd) for bd in bounds]
    counts = np.sum(parts, axis=0) if len(parts) > 1 else parts[0]
    dur = duration if duration is not None else _span_seconds(a, b)
    return CorrelationHistogram(int(bin_width), int(range_), counts, a.size, b.size, dur)


autocorrelate = cross_correlate


def cross_correlate_naive(tags_a, tags_b, bin_width: int, range_: int) -> np.ndarray:
    """O(n_a * n_b) all-pairs reference; makes no use of ordering."""
    a = np.ascontiguousarray(tags_a, dtype=np.int64)
    b = np.ascontiguousarray(tags_b, dtype=np.int64)
    lo, nbins = _bins(int(bin_width), int(range_))
    hist = np.zeros(nbins, dtype=np.int64)
    _xcorr_bruteforce(a, b, lo, int(bin_width), nbins, hist)
    return hist


@numba.njit(nogil=True, cache=True)
def _hbt_kernel(h, a, b, window, delay, exclusive):
    ia = 0
    ib = 0
    na_len = a.size
    nb_len = b.size
    n = 0
    n_a = 0
    n_b = 0
    n_ab = 0
    last_end = np.iinfo(np.int64).min
    for k in range(h.size):
        start = h[k] + delay
        end = start + window
        if exclusive and start < last_end:
            continue
        last_end = end
        n += 1
        while ia < na_len and a[ia] < start:
            ia += 1
        while ib < nb_len and b[ib] < start:
            ib += 1
        hit_a = ia < na_len and a[ia] < end
        hit_b = ib < nb_len and b[ib] < end
        if hit_a:
            n_a += 1
        if hit_b:
            n_b += 1
        if hit_a and hit_b:
            n_ab += 1
    return n, n_a, n_b, n_ab


@numba.njit(cache=True)
def _hbt_bruteforce(h, a, b, window, delay):
    n_a = 0
    n_b = 0
    n_ab = 0
    for k in range(h.size):
        start = h[k] + delay
        end = start + window
        hit_a = False
        hit_b = False
        for i in range(a.size):
            if a[i] >= start and a[i] < end:
                hit_a = True
        for j in range(b.size):
            if b[j] >= start and b[j] < end:
                hit_b = True
        n_a += hit_a
        n_b += hit_b
        n_ab += hit_a and hit_b
    return h.size, n_a, n_b, n_ab


def find_delay(heralds, signal, search_range: int = 2000) -> int:
    """Lag (ticks) of the herald-signal correlation peak."""
    hist = cross_correlate(heralds, signal, 1, search_range)
    return hist.peak_lag()


def merge_streams(*streams) -> np.ndarray:
    return np.sort(np.concatenate([np.asarray(s, dtype=np.int64) for s in streams]), kind="stable")


def centered_delay(peak: int, window: int) -> int:
    return int(peak) - int(window) // 2


def heralded_hbt(
    heralds,
    tags_a,
    tags_b,
    window: int,
    delay: int | None = None,
    exclusive: bool = False,
) -> HbtCounts:
    """Count heralds followed by clicks in [h + delay, h + delay + window).

    Overlapping windows of close heralds are all evaluated unless
    ``exclusive`` is set, in which case a herald whose window overlaps the
    previously counted one is skipped.  ``delay=None`` centres the window on
    the herald-signal correlation peak.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    h = _as_stream(heralds, "heralds")
    a = _as_stream(tags_a, "tags_a")
    b = _as_stream(tags_b, "tags_b")
    if delay is None:
        delay = centered_delay(find_delay(h, merge_streams(a, b)), window)
    n, n_a, n_b, n_ab = _hbt_kernel(h, a, b, int(window), int(delay), bool(exclusive))
    return HbtCounts(int(n), int(n_a), int(n_b), int(n_ab), int(window), int(delay))


def heralded_hbt_naive(heralds, tags_a, tags_b, window: int, delay: int) -> HbtCounts:
    h, a, b = (np.ascontiguousarray(x, dtype=np.int64) for x in (heralds, tags_a, tags_b))
    n, n_a, n_b, n_ab = _hbt_bruteforce(h, a, b, int(window), int(delay))
    return HbtCounts(int(n), int(n_a), int(n_b), int(n_ab), int(window), int(delay))


def clocked_hbt(tags_a, tags_b, window: int, start: int, stop: int) -> HbtCounts:
    """HBT tallies over consecutive clock windows [start + k w, start + (k+1) w)."""
    a = _as_stream(tags_a, "tags_a")
    b = _as_stream(tags_b, "tags_b")
    n = (int(stop) - int(start)) // int(window)
    if n <= 0:
        raise ValueError("no complete window between start and stop")

    def slots(x):
        x = x[(x >= start) & (x < start + n * window)]
        return np.unique((x - start) // window)

    sa, sb = slots(a), slots(b)
    n_ab = np.intersect1d(sa, sb, assume_unique=True).size
    return HbtCounts(n, sa.size, sb.size, n_ab, int(window), 0)


def window_scan(
    heralds,
    tags_a,
    tags_b,
    window_grid_s,
    delay_peak: int | None = None,
    min_coincidences: int = 10,
) -> WindowScan:
    """Pick the coincidence window minimizing P2+/P1^3.

    Args:
        window_grid_s: candidate windows in seconds; each must be an integer
            multiple of the 81 ps tick.
        delay_peak: herald-signal peak lag in ticks; detected when omitted.
            Each window is centred on it.
        min_coincidences: windows with fewer a-b coincidences are not
            eligible (their P2+ is undetermined and would read as zero).

    Ties go to the smaller window.
    """
    from .estimators import click_probs, estimate_state

    grid = np.atleast_1d(np.asarray(window_grid_s, dtype=float))
    if grid.size == 0:
        raise ValueError("window grid is empty")
    windows = np.array([to_ticks(w) for w in grid], dtype=np.int64)
    if np.any(windows <= 0):
        raise ValueError("windows must be positive")
    h = _as_stream(heralds, "heralds")
    a = _as_stream(tags_a, "tags_a")
    b = _as_stream(tags_b, "tags_b")
    if delay_peak is None:
        delay_peak = find_delay(h, merge_streams(a, b))
    objective = np.empty(windows.size)
    counts = []
    for k, w in enumerate(windows):
        c = heralded_hbt(h, a, b, int(w), centered_delay(delay_peak, int(w)))
        counts.append(c)
        s = estimate_state(click_probs(c), warn=False)
        ok = s.p1 > 0 and c.n_ab >= min_coincidences
        objective[k] = s.p2plus / s.p1**3 if ok else math.inf
    order = np.lexsort((windows, objective))
    return WindowScan(int(windows[order[0]]), windows, objective, counts)


@numba.njit(nogil=True, cache=True)
def _heralded_pairs_kernel(h, a, b, window, delay, lo, nbins, hist_ab, hist_ha):
    ia = 0
    jb = 0
    hi = lo + nbins
    for k in range(h.size):
        start = h[k] + delay
        end = start + window
        while ia < a.size and a[ia] < start:
            ia += 1
        i = ia
        while i < a.size and a[i] < end:
            ai = a[i]
            hist_ha[ai - start] += 1
            while jb < b.size and b[jb] < start + lo:
                jb += 1
            j = jb
            while j < b.size and b[j] < ai + hi:
                d = b[j] - ai
                if d >= lo:
                    hist_ab[d - lo] += 1
                j += 1
            i += 1


def heralded_autocorrelation(
    heralds,
    tags_a,
    tags_b,
    window: int,
    delay: int,
    bin_width: int,
    range_: int,
) -> HeraldedG2:
    """Directly measured heralded g2 of the HBT arms versus t_b - t_a.

    For every a-click inside a herald window, b-clicks at lag tau are
    counted.  The expectation for uncorrelated arms is built from the
    herald-b correlation profile at the same herald offset, so the ratio
    tends to one at long lags.
    """
    h = _as_stream(heralds, "heralds")
    a = _as_stream(tags_a, "tags_a")
    b = _as_stream(tags_b, "tags_b")
    lo_bin, nbins = _bins(int(bin_width), int(range_))
    lo = lo_bin
    span = nbins * bin_width
    hist_ab = np.zeros(span, dtype=np.int64)
    hist_ha = np.zeros(int(window), dtype=np.int64)
    _heralded_pairs_kernel(h, a, b, int(window), int(delay), lo, span, hist_ab, hist_ha)

    # herald-b profile over every offset that an a-click position plus a lag can reach
    prof_lo = int(delay) + lo
    prof_len = int(window) + span
    prof = cross_correlate(h, b, 1, max(abs(prof_lo), abs(prof_lo + prof_len)) + 1)
    plags = np.round(prof.lags).astype(np.int64)
    sel = (plags >= prof_lo) & (plags < prof_lo + prof_len)
    rho = prof.counts[sel].astype(float) / max(h.size, 1)
    # expected(u) = sum_s H_a(s) rho(s + u), s = offset of a within the window
    expected_fine = np.correlate(rho, hist_ha.astype(float), mode="valid")[:span]
    num = hist_ab.reshape(nbins, bin_width).sum(axis=1)
    exp = expected_fine.reshape(nbins, bin_width).sum(axis=1)
    k = np.arange(nbins) - nbins // 2
    lags = k * bin_width - bin_width // 2 + (bin_width - 1) / 2
    return HeraldedG2(lags, num, exp)


def coincidence_rate(heralds, signal, window: int, delay: int, duration: float) -> tuple[float, float]:
    """Raw herald-signal coincidence rate in [h + delay, h + delay + window) and its accidental part."""
    h = _as_stream(heralds, "heralds")
    s = _as_stream(signal, "signal")
    lo = np.searchsorted(s, h + delay, side="left")
    hi = np.searchsorted(s, h + delay + window, side="left")
    pairs = int(np.sum(hi - lo))
    accidental = h.size * s.size * window / max(duration / TICK_SECONDS, 1.0)
    return pairs / duration, accidental / duration
