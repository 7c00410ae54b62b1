from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.signal import peak_prominences as scipy_prominences

from breathscope.cloud import PointCloud, RoiBox
from breathscope.errors import CoverageError, NoSignalError, ParameterError
from breathscope.respsignal import (
    BandSelection,
    DepthGrid,
    Lattice,
    RespSeries,
    bandpass,
    build_series,
    choose_reference,
    classify,
    count_breaths,
    depth_delta,
    depth_grid_from_cloud,
    dft,
    fft,
    find_breath_peaks,
    idft,
    max_excursion,
    peak_prominences,
    select_band,
    _local_maxima,
)


def naive_dft(x):
    x = np.asarray(x, dtype=complex)
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * kk * k / n)) for kk in range(n)])


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


# -- depth grids --------------------------------------------------------------

LAT = Lattice(10.0, -50.0, -50.0, 10, 10)


def test_single_point_cell():
    g = depth_grid_from_cloud(PointCloud([[0, 0, 1000]]), LAT)
    assert g.valid.sum() == 1 and g.z[5, 5] == 1000


def test_dense_plane_cells():
    xy = np.stack(np.meshgrid(np.linspace(-49, 49, 60), np.linspace(-49, 49, 60)), -1).reshape(-1, 2)
    g = depth_grid_from_cloud(np.column_stack([xy, np.full(len(xy), 800.0)]), LAT)
    assert g.valid.all()
    np.testing.assert_allclose(g.z, 800, atol=1e-9)


def test_two_points_mean():
    g = depth_grid_from_cloud(np.array([[1, 1, 900], [2, 3, 910.0]]), LAT)
    assert g.z[5, 5] == 905


def test_empty_cloud_all_invalid():
    assert not depth_grid_from_cloud(np.zeros((0, 3)), LAT).valid.any()


def test_grid_matches_per_cell_enumeration(rng):
    pts = np.column_stack([rng.uniform(-60, 60, 400), rng.uniform(-60, 60, 400), rng.uniform(700, 900, 400)])
    g = depth_grid_from_cloud(pts, LAT)
    for iy in range(10):
        for ix in range(10):
            x0, y0 = -50 + ix * 10, -50 + iy * 10
            m = (pts[:, 0] >= x0) & (pts[:, 0] < x0 + 10) & (pts[:, 1] >= y0) & (pts[:, 1] < y0 + 10)
            if m.any():
                assert g.z[iy, ix] == pytest.approx(pts[m, 2].mean(), rel=1e-12)
            else:
                assert np.isnan(g.z[iy, ix])


def _grid(z):
    z = np.asarray(z, float)
    return DepthGrid(Lattice(10.0, 0.0, 0.0, z.shape[1], z.shape[0]), z)


def test_delta_identity_and_shift(rng):
    z = rng.uniform(800, 900, (6, 6))
    assert depth_delta(_grid(z), _grid(z)) == 0
    assert depth_delta(_grid(z - 7), _grid(z)) == pytest.approx(7)


@pytest.mark.parametrize("n_small", [10, 18, 26])
def test_delta_median_by_enumeration(rng, n_small):
    ref = rng.uniform(800, 900, (6, 6))
    cells = rng.permutation(36)
    shift = np.full(36, 10.0)
    shift[cells[:n_small]] = 4.0
    frame = ref + shift.reshape(6, 6)
    diffs = sorted((ref - frame).ravel())
    expect = (diffs[17] + diffs[18]) / 2
    assert depth_delta(_grid(frame), _grid(ref)) == pytest.approx(expect)
    assert expect in (-4.0, -7.0, -10.0)


def test_delta_coverage_error():
    ref = np.full((4, 4), 900.0)
    frame = np.full((4, 4), np.nan)
    frame[0, :3] = 899
    with pytest.raises(CoverageError):
        depth_delta(_grid(frame), _grid(ref))
    frame[1, :1] = 899
    assert depth_delta(_grid(frame), _grid(ref)) == 1.0


def test_delta_roi_restricts_cells():
    ref = np.full((4, 4), 900.0)
    frame = ref.copy()
    frame[:, :2] -= 5  # left half moves 5 mm toward the camera
    roi = RoiBox((0, 0, 0), (19, 40, 2000))
    assert depth_delta(_grid(frame), _grid(ref), roi) == 5


# -- series -------------------------------------------------------------------

def test_build_series():
    s = build_series([1.0, 2.0, 3.0], 30)
    np.testing.assert_allclose(s.t, [0, 1 / 30, 2 / 30])
    assert np.all(build_series(np.full(7, 4.2), 10).values == 0)
    with pytest.raises(ParameterError):
        build_series([], 10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200))
def test_build_series_zero_mean(vals):
    assert abs(build_series(vals, 5).values.mean()) < 1e-12 * max(1.0, max(abs(v) for v in vals))


# -- transforms ---------------------------------------------------------------

def test_dc_and_single_bin():
    spec = fft(RespSeries(np.ones(8), 1.0))
    np.testing.assert_allclose(spec.coefficients, [8, 0, 0, 0, 0, 0, 0, 0], atol=1e-12)
    x = np.cos(2 * np.pi * 2 * np.arange(8) / 8)
    mag = fft(RespSeries(x, 1.0)).magnitude
    np.testing.assert_allclose(mag, [0, 0, 4, 0, 0, 0, 4, 0], atol=1e-12)


def test_length_1000_matches_naive(rng):
    x = rng.normal(size=1000)
    spec = fft(RespSeries(x, 15.0))
    assert spec.n == 1024 and spec.n_signal == 1000
    padded = np.concatenate([x, np.zeros(24)])
    assert rel_err(spec.coefficients, naive_dft(padded)) < 1e-9


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 8, 12, 100, 255, 257, 900, 1000, 2048])
def test_exact_length_dft(rng, n):
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    assert rel_err(dft(x), naive_dft(x)) < 1e-9
    np.testing.assert_allclose(idft(dft(x)), x, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 600), seed=st.integers(0, 2**32 - 1))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    spec = fft(RespSeries(x, 10.0))
    energy = np.sum(x**2)
    assert abs(energy - np.sum(spec.magnitude**2) / spec.n) <= 1e-9 * energy
    ex = dft(x)
    assert abs(energy - np.sum(np.abs(ex) ** 2) / n) <= 1e-9 * energy


def test_frequencies_bins():
    spec = fft(RespSeries(np.zeros(10), 8.0))
    np.testing.assert_allclose(spec.frequencies, np.arange(16) * 0.5)
    assert spec.bins[3][0] == 1.5


# -- band selection and filtering -----------------------------------------------

def _sine(f, dur=60, fs=15, amp=1.0, phase=0.0):
    t = np.arange(int(dur * fs)) / fs
    return amp * np.sin(2 * np.pi * f * t + phase)


def test_select_band_0p3():
    band = select_band(fft(build_series(_sine(0.3), 15)))
    assert abs(band.peak_hz - 0.3) <= 15 / 1024 / 2 + 1e-12
    assert band.f_lo == pytest.approx(band.peak_hz - 0.1) and band.f_hi == pytest.approx(band.peak_hz + 0.1)
    assert 0.18 < band.f_lo < 0.22 and 0.38 < band.f_hi < 0.42


def test_select_band_two_tones():
    band = select_band(fft(build_series(_sine(0.25, amp=2) + _sine(0.9), 15)))
    assert abs(band.peak_hz - 0.25) < 0.02


def test_select_band_excluded_tone():
    with pytest.raises(NoSignalError):
        select_band(fft(build_series(_sine(3.0), 15)))


def test_select_band_zero_series():
    with pytest.raises(NoSignalError):
        select_band(fft(RespSeries(np.zeros(64), 15)))


def test_select_band_clamped_to_plausible():
    band = select_band(fft(build_series(_sine(0.1), 15)))
    assert band.f_lo == 0.08


def test_bandpass_passthrough():
    x = _sine(0.3)
    out = bandpass(RespSeries(x, 15), BandSelection(0.2, 0.4))
    np.testing.assert_allclose(out.values, x, atol=1e-9)


def test_bandpass_removes_out_of_band():
    slow = _sine(0.3, amp=3)
    fast = _sine(5.0, amp=1.5)
    out = bandpass(RespSeries(slow + fast, 15), BandSelection(0.2, 0.4))
    np.testing.assert_allclose(out.values, slow, atol=1e-6)


def test_bandpass_empty_band():
    out = bandpass(RespSeries(_sine(0.3), 15), BandSelection(3.0, 4.0))
    np.testing.assert_allclose(out.values, 0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(8, 500), seed=st.integers(0, 2**32 - 1), lo=st.floats(0.05, 2.0), width=st.floats(0.05, 3.0))
def test_bandpass_idempotent_zero_mean(n, seed, lo, width):
    fs = 10.0
    assume(lo + width <= fs / 2)
    x = np.random.default_rng(seed).normal(size=n) + 3.0
    band = BandSelection(lo, lo + width)
    once = bandpass(RespSeries(x, fs), band)
    twice = bandpass(once, band)
    assert np.abs(twice.values - once.values).max() <= 1e-9 * max(1.0, np.abs(once.values).max())
    assert abs(once.values.mean()) < 1e-9


def test_band_validation():
    with pytest.raises(ParameterError):
        bandpass(RespSeries(np.zeros(10), 2.0), BandSelection(0.5, 1.5))


# -- peaks ----------------------------------------------------------------------

def test_sine_has_18_peaks():
    assert count_breaths(RespSeries(_sine(0.3), 15)) == 18


def test_zero_series_no_peaks():
    assert count_breaths(RespSeries(np.zeros(100), 15)) == 0


def test_prominences_match_scipy(rng):
    for _ in range(20):
        x = np.cumsum(rng.normal(size=300))
        x[rng.integers(0, 300, 10)] = x.max()  # some plateaus and equal heights
        peaks = _local_maxima(x)
        np.testing.assert_allclose(peak_prominences(x, peaks), scipy_prominences(x, peaks)[0])


def brute_peaks(x, fs, mult, spacing):
    """Enumerate maxima, filter by prominence, then keep greedily by height."""
    sd = np.std(x)
    cands = []
    for i in range(1, len(x) - 1):
        if x[i - 1] < x[i] and x[i + 1] < x[i]:
            prom = scipy_prominences(x, [i])[0][0]
            if prom >= mult * sd:
                cands.append(i)
    kept = []
    for i in sorted(cands, key=lambda j: (-x[j], j)):
        if all(abs(i - k) / fs >= spacing for k in kept):
            kept.append(i)
    return sorted(kept)


def test_peaks_match_enumeration(rng):
    for _ in range(20):
        t = np.arange(450) / 15
        x = np.sin(2 * np.pi * rng.uniform(0.1, 0.8) * t) + rng.normal(scale=0.3, size=len(t))
        got = find_breath_peaks(RespSeries(x, 15), 0.5, 1.0)
        assert got.tolist() == brute_peaks(x, 15, 0.5, 1.0)


def test_close_equal_peaks_keep_earlier():
    x = np.zeros(40)
    x[10] = x[14] = 5.0
    x[30] = 3.0
    assert find_breath_peaks(RespSeries(x, 10), 0.1, 1.0).tolist() == [10, 30]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3), offset=st.floats(-1e3, 1e3))
def test_count_invariant_to_scale_and_offset(seed, scale, offset):
    rng = np.random.default_rng(seed)
    # dyadic values keep scaling and shifting exact, so comparisons cannot flip
    x = rng.integers(-64, 64, 300) / 8.0
    scale = 2.0 ** np.round(np.log2(scale))
    offset = np.round(offset)
    base = count_breaths(RespSeries(x, 15))
    assert count_breaths(RespSeries(x * scale, 15)) == base
    assert count_breaths(RespSeries(x + offset, 15)) == base


# -- classification -------------------------------------------------------------

@pytest.mark.parametrize("count, duration, band, expect", [
    (12, 30, "under6", "normal"),
    (20, 30, "unspecified", "above_range"),
    (8, 30, "unspecified", "below_range"),
    (22, 60, "under6", "normal"),
    (34, 60, "under6", "normal"),
    (21, 60, "under6", "below_range"),
    (35, 60, "under6", "above_range"),
    (18, 60, "six_to_twelve", "normal"),
    (30, 60, "six_to_twelve", "normal"),
    (31, 60, "six_to_twelve", "above_range"),
    (10, 30, "unspecified", "normal"),
    (17, 30, "unspecified", "normal"),
    (42, 60, "unspecified", "above_range"),
])
def test_classify(count, duration, band, expect):
    assert classify(count, duration, band) == expect


def test_classify_errors():
    with pytest.raises(ParameterError):
        classify(10, 0)
    with pytest.raises(ParameterError):
        classify(10, 30, "adult")


def test_max_excursion():
    assert max_excursion(RespSeries(10 * np.sin(2 * np.pi * np.arange(400) / 40), 10)) == pytest.approx(10)
    assert max_excursion(RespSeries(-np.ones(5) - np.arange(5), 1)) == 0


def test_choose_reference_midpoint():
    d = np.array([0.0, 2.0, 4.0, 6.0, 8.0, 5.1, 1.0, 100.0])
    assert choose_reference(d, fs=1.0, window_s=7) == 2
    assert choose_reference(np.full(4, np.nan), 1.0, 4) == 0
