import time

import numpy as np
import pytest

from qpl.engine import (
    clocked_hbt,
    cross_correlate,
    cross_correlate_naive,
    heralded_autocorrelation,
    heralded_hbt,
    heralded_hbt_naive,
    window_scan,
)
from qpl.tags import TICK_SECONDS, to_ticks


def poisson_stream(rng, rate_per_tick, n):
    return np.cumsum(rng.geometric(rate_per_tick, n)).astype(np.int64)


def correlated_streams(rng, n, spread=30):
    a = poisson_stream(rng, 0.01, n)
    keep = rng.random(n) < 0.5
    b = np.sort(np.concatenate([a[keep] + rng.integers(-spread, spread, keep.sum()), poisson_stream(rng, 0.01, n // 2)]))
    return a, b


def test_single_pair_bin():
    hist = cross_correlate([0], [to_ticks(81e-12) * 12], 1, 100)  # 12 ticks = 0.972 ns
    assert hist.counts.sum() == 1
    k = np.flatnonzero(hist.counts)[0]
    assert hist.lags[k] == 12
    # 1 ns is not on the tick grid; the quantized tag lands in the bin containing +1 ns
    t = int(np.rint(1e-9 / TICK_SECONDS))
    hist = cross_correlate([0], [t], 1, 100)
    k = np.flatnonzero(hist.counts)[0]
    assert abs(hist.taus[k] - 1e-9) <= TICK_SECONDS / 2


def test_centered_bins():
    hist = cross_correlate([100], [100 - 2, 100 - 1, 100, 100 + 1, 100 + 2], 3, 6)
    # bins of width 3 centred on ..., -3, 0, 3, ...
    assert hist.counts.tolist() == [0, 1, 3, 1, 0]
    assert hist.lags.tolist() == [-6, -3, 0, 3, 6]


@pytest.mark.parametrize("bin_width, range_", [(1, 50), (4, 200), (7, 3000)])
def test_equals_naive(bin_width, range_):
    rng = np.random.default_rng(bin_width)
    a, b = correlated_streams(rng, 100_000)
    fast = cross_correlate(a, b, bin_width, range_).counts
    assert np.array_equal(fast, cross_correlate_naive(a, b, bin_width, range_))


def test_rejects_unsorted():
    with pytest.raises(ValueError):
        cross_correlate([3, 1], [0], 1, 5)
    with pytest.raises(ValueError):
        heralded_hbt([0], [5, 1], [], 10, 0)


def test_independent_streams_flat():
    rng = np.random.default_rng(5)
    a = poisson_stream(rng, 0.002, 200_000)
    b = poisson_stream(rng, 0.002, 200_000)
    hist = cross_correlate(a, b, 20, 2000)
    z = (hist.g2() - 1) / hist.g2_sigma()
    assert np.mean(np.abs(z) < 3) > 0.99
    assert abs(hist.g2().mean() - 1) < 0.01


@pytest.mark.parametrize("shards, threads", [(2, 1), (7, 1), (5, 3)])
def test_sharding_bit_identical(shards, threads):
    rng = np.random.default_rng(11)
    a, b = correlated_streams(rng, 200_000)
    seq = cross_correlate(a, b, 2, 500).counts
    par = cross_correlate(a, b, 2, 500, shards=shards, threads=threads).counts
    assert np.array_equal(seq, par)


def test_throughput():
    rng = np.random.default_rng(2)
    n = 2_000_000
    a = poisson_stream(rng, 0.01, n)
    b = poisson_stream(rng, 0.01, n)
    cross_correlate(a[:100], b[:100], 1, 4096)  # jit warm-up
    best = 0.0
    for _ in range(3):
        t0 = time.perf_counter()
        cross_correlate(a, b, 1, 2048)  # 4097 bins
        best = max(best, 2 * n / (time.perf_counter() - t0))
    assert best >= 1e7


def test_hbt_examples():
    w = to_ticks(5.67e-9)
    one_ns = int(np.rint(1e-9 / TICK_SECONDS))
    c = heralded_hbt([0], [one_ns], [], w, 0)
    assert (c.n_heralds, c.n_a, c.n_b, c.n_ab) == (1, 1, 0, 0)
    c = heralded_hbt([0], [w + 5], [], w, 0)
    assert c.n_a == 0
    c = heralded_hbt([0], [w], [], w, 0)  # half-open window
    assert c.n_a == 0


def test_hbt_overlapping_and_exclusive():
    h = [0, 2, 40]
    c = heralded_hbt(h, [5], [6], 10, 0)
    assert (c.n_heralds, c.n_a, c.n_b, c.n_ab) == (3, 2, 2, 2)
    c = heralded_hbt(h, [5], [6], 10, 0, exclusive=True)
    assert (c.n_heralds, c.n_a, c.n_ab) == (2, 1, 1)


def test_hbt_equals_naive_and_translation_invariant():
    rng = np.random.default_rng(4)
    h = poisson_stream(rng, 0.005, 20_000)
    a, b = (np.sort(np.concatenate([h[rng.random(h.size) < 0.2] + rng.integers(10, 40, 1)[0], poisson_stream(rng, 0.003, 20_000)])) for _ in range(2))
    for window, delay in [(70, 5), (6, -3), (200, 0)]:
        fast = heralded_hbt(h, a, b, window, delay)
        assert fast == heralded_hbt_naive(h, a, b, window, delay)
        shift = 123_456_789
        assert heralded_hbt(h + shift, a + shift, b + shift, window, delay) == fast


def test_default_delay_centres_on_peak():
    h = np.arange(0, 100_000, 500, dtype=np.int64)
    a = h + 30
    c = heralded_hbt(h, a, np.zeros(0, np.int64), 10)
    assert c.delay == 25 and c.n_a == h.size


def test_clocked_hbt():
    c = clocked_hbt([0, 1, 15, 25], [2, 26, 35], 10, 0, 40)
    assert (c.n_heralds, c.n_a, c.n_b, c.n_ab) == (4, 3, 3, 2)


def test_window_scan_single_window():
    h = np.arange(0, 10_000, 100, dtype=np.int64)
    scan = window_scan(h, h + 10, h[::2] + 12, [81e-12 * 70])
    assert scan.best_window == 70


def test_window_scan_fock1_ties_to_smallest():
    rng = np.random.default_rng(0)
    h = np.arange(0, 1_000_000, 1000, dtype=np.int64)
    route = rng.random(h.size) < 0.5
    a, b = h[route] + 20, h[~route] + 20
    grid = 81e-12 * np.array([40, 10, 70, 20])
    scan = window_scan(h, a, b, grid, min_coincidences=0)
    assert np.all(scan.objective == 0)
    assert scan.best_window == 10


def test_window_scan_skips_windows_without_coincidences():
    rng = np.random.default_rng(1)
    h = np.arange(0, 10_000_000, 1000, dtype=np.int64)
    a = h + 5
    # b clicks in the same slot 20 % of the time, but only at lag 30
    b = np.sort(h[rng.random(h.size) < 0.2] + 30)
    scan = window_scan(h, a, b, 81e-12 * np.array([10, 80]))
    assert np.isinf(scan.objective[0])
    assert scan.best_window == 80


def test_window_scan_rejects_off_grid():
    with pytest.raises(ValueError):
        window_scan([0], [1], [2], [100e-12])
    with pytest.raises(ValueError):
        window_scan([0], [1], [2], [])


def test_heralded_autocorrelation_flat_for_independent_arms():
    rng = np.random.default_rng(8)
    h = poisson_stream(rng, 0.002, 200_000)
    a = poisson_stream(rng, 0.01, 1_000_000)
    b = poisson_stream(rng, 0.01, 1_000_000)
    g = heralded_autocorrelation(h, a, b, 70, 0, 10, 300)
    assert np.nanmean(g.g2) == pytest.approx(1.0, abs=0.03)
