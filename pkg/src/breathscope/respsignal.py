"""From aligned clouds to a breathing report.

Each aligned frame is binned onto a fixed x-y lattice (mean depth per
cell), compared with the reference frame's lattice to give one displacement
sample, and the resulting series is band-passed in the frequency domain
before peaks are counted.

Sign convention: positive displacement means the chest moved towards the
camera (inhalation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, RoiBox
from .errors import CoverageError, NoSignalError, ParameterError

AGE_BANDS = ("under6", "six_to_twelve", "unspecified")
CLASSES = ("below_range", "normal", "above_range")
# breaths per minute, closed intervals
NORMAL_BPM = {"under6": (22.0, 34.0), "six_to_twelve": (18.0, 30.0)}
# breaths per 30 s when no age is given
UNSPECIFIED_30S = (10.0, 17.0)

DEFAULT_PLAUSIBLE = (0.08, 1.5)
MIN_OVERLAP = 0.25


# --------------------------------------------------------------------------
# depth grids


@dataclass(frozen=True)
class Lattice:
    cell: float
    x0: float
    y0: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not self.cell > 0:
            raise ParameterError("lattice cell size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ParameterError("lattice needs at least one cell")

    @classmethod
    def covering(cls, points: np.ndarray, cell: float) -> "Lattice":
        """Smallest lattice aligned to multiples of ``cell`` that holds ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not len(pts):
            return cls(cell, 0.0, 0.0, 1, 1)
        x0 = np.floor(pts[:, 0].min() / cell) * cell
        y0 = np.floor(pts[:, 1].min() / cell) * cell
        nx = int(np.floor((pts[:, 0].max() - x0) / cell)) + 1
        ny = int(np.floor((pts[:, 1].max() - y0) / cell)) + 1
        return cls(cell, float(x0), float(y0), nx, ny)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.cell
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.cell
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class DepthGrid:
    lattice: Lattice
    z: np.ndarray  # (ny, nx); NaN where no point fell

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.z)


def depth_grid_from_cloud(cloud: PointCloud | np.ndarray, lattice: Lattice) -> DepthGrid:
    """Mean depth of the points falling in each lattice cell."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    ix = np.floor((pts[:, 0] - lattice.x0) / lattice.cell).astype(np.int64)
    iy = np.floor((pts[:, 1] - lattice.y0) / lattice.cell).astype(np.int64)
    inside = (ix >= 0) & (ix < lattice.nx) & (iy >= 0) & (iy < lattice.ny)
    flat = iy[inside] * lattice.nx + ix[inside]
    size = lattice.nx * lattice.ny
    count = np.bincount(flat, minlength=size)
    total = np.bincount(flat, weights=pts[inside, 2], minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return DepthGrid(lattice, z.reshape(lattice.ny, lattice.nx))


def _roi_cells(grid: DepthGrid, roi: RoiBox) -> np.ndarray:
    if roi.is_full:
        return np.ones(grid.z.shape, dtype=bool)
    cx, cy = grid.lattice.centers()
    lo, hi = roi.lo, roi.hi
    with np.errstate(invalid="ignore"):
        return (cx >= lo[0]) & (cx <= hi[0]) & (cy >= lo[1]) & (cy <= hi[1]) & (grid.z >= lo[2]) & (grid.z <= hi[2])


def depth_delta(frame: DepthGrid, reference: DepthGrid, roi: RoiBox | None = None,
                min_overlap: float = MIN_OVERLAP) -> float:
    """Median of ``reference.z - frame.z`` over cells valid in both.

    Raises :class:`CoverageError` when the shared cells number less than
    ``min_overlap`` of the reference's valid cells inside ``roi``.
    """
    if frame.lattice != reference.lattice:
        raise ParameterError("frame and reference grids use different lattices")
    roi = roi or RoiBox()
    ref_cells = reference.valid & _roi_cells(reference, roi)
    shared = ref_cells & frame.valid
    n_ref = int(ref_cells.sum())
    if n_ref == 0 or shared.sum() < min_overlap * n_ref:
        raise CoverageError(f"frame overlaps {int(shared.sum())} of {n_ref} reference cells")
    return float(np.median(reference.z[shared] - frame.z[shared]))


# --------------------------------------------------------------------------
# series and spectra


@dataclass(frozen=True)
class RespSeries:
    values: np.ndarray
    fs: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).ravel()
        if not self.fs > 0:
            raise ParameterError("sampling rate must be positive")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("series contains non-finite samples")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.fs

    @property
    def duration(self) -> float:
        return len(self.values) / self.fs

    def split(self) -> tuple["RespSeries", "RespSeries"]:
        half = len(self.values) // 2
        return RespSeries(self.values[:half], self.fs), RespSeries(self.values[half:], self.fs)


def build_series(deltas, fs: float) -> RespSeries:
    """Uniformly sampled series with its mean removed."""
    vals = np.asarray(deltas, dtype=float).ravel()
    if not len(vals):
        raise ParameterError("cannot build a series from no samples")
    if not fs > 0:
        raise ParameterError("sampling rate must be positive")
    return RespSeries(vals - vals.mean(), fs)


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT; ``len(x)`` must be a power of two."""
    x = np.asarray(x, dtype=complex).ravel()
    n = len(x)
    if n == 0 or n & (n - 1):
        raise ParameterError(f"radix-2 FFT needs a power-of-two length, got {n}")
    out = x[_bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(-1, size)
        even = blocks[:, :half]
        odd = blocks[:, half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=1).ravel()
        size *= 2
    return out


def ifft_radix2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    return np.conj(fft_radix2(np.conj(x))) / len(x)


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def dft(x: np.ndarray) -> np.ndarray:
    """Exact-length DFT: radix-2 when possible, otherwise Bluestein's chirp-z."""
    x = np.asarray(x, dtype=complex).ravel()
    n = len(x)
    if n & (n - 1) == 0:
        return fft_radix2(x)
    k = np.arange(n)
    # n^2 mod 2n keeps the chirp phase accurate for long inputs
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = next_pow2(2 * n - 1)
    a = np.zeros(m, dtype=complex)
    a[:n] = x * chirp
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:][::-1])
    conv = ifft_radix2(fft_radix2(a) * fft_radix2(b))
    return conv[:n] * chirp


def idft(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    return np.conj(dft(np.conj(x))) / len(x)


def bin_frequencies(n: int, fs: float) -> np.ndarray:
    """Signed bin frequencies ``k fs / n`` (upper half mapped to negatives)."""
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n) * fs / n


@dataclass(frozen=True)
class Spectrum:
    coefficients: np.ndarray
    n_signal: int
    fs: float

    @property
    def n(self) -> int:
        return len(self.coefficients)

    @property
    def frequencies(self) -> np.ndarray:
        """Bin frequencies ``k fs / N`` for ``k = 0..N-1``."""
        return np.arange(self.n) * self.fs / self.n

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coefficients)

    def one_sided(self) -> tuple[np.ndarray, np.ndarray]:
        """Frequencies and magnitudes for ``0 <= f <= fs/2``."""
        half = self.n // 2 + 1
        return self.frequencies[:half], self.magnitude[:half]

    @property
    def bins(self) -> list[tuple[float, complex]]:
        return list(zip(self.frequencies.tolist(), self.coefficients.tolist()))


def fft(series: RespSeries) -> Spectrum:
    """Spectrum of the series zero-padded to the next power of two."""
    n = len(series)
    if n < 2:
        raise ParameterError("need at least two samples for a spectrum")
    padded = np.zeros(next_pow2(n))
    padded[:n] = series.values
    return Spectrum(fft_radix2(padded), n, series.fs)


@dataclass(frozen=True)
class BandSelection:
    f_lo: float
    f_hi: float
    peak_hz: float | None = None

    def validate(self, fs: float) -> None:
        if not 0 < self.f_lo < self.f_hi <= fs / 2 + 1e-12:
            raise ParameterError(f"band [{self.f_lo}, {self.f_hi}] Hz invalid for fs={fs}")


def select_band(spec: Spectrum, plausible: tuple[float, float] = DEFAULT_PLAUSIBLE, margin: float = 0.1,
                min_relative_peak: float = 0.05) -> BandSelection:
    """Band of width ``2 * margin`` around the strongest plausible breathing bin.

    The strongest bin inside ``plausible`` must reach ``min_relative_peak``
    of the strongest non-DC bin overall, otherwise the in-band energy is
    treated as leakage and :class:`NoSignalError` is raised.
    """
    lo, hi = plausible
    if not 0 < lo < hi <= spec.fs / 2:
        raise ParameterError(f"plausible band {plausible} must lie inside (0, {spec.fs / 2}] Hz")
    freqs, mags = spec.one_sided()
    inside = (freqs >= lo) & (freqs <= hi)
    if not inside.any():
        raise NoSignalError(f"no spectral bins inside {plausible} Hz")
    in_mags = np.where(inside, mags, -1.0)
    k = int(np.argmax(in_mags))
    overall = mags[1:].max() if len(mags) > 1 else 0.0
    if not mags[k] > 0 or mags[k] < min_relative_peak * overall:
        raise NoSignalError(f"no breathing component inside {plausible} Hz")
    peak = float(freqs[k])
    return BandSelection(max(lo, peak - margin), min(hi, peak + margin), peak)


def bandpass(series: RespSeries, band: BandSelection) -> RespSeries:
    """Zero every DFT bin outside ``f_lo <= |f| <= f_hi`` and invert.

    Works on the exact-length transform, so the filter is a projection and
    applying it twice changes nothing.
    """
    band.validate(series.fs)
    n = len(series)
    coeffs = dft(series.values)
    f = np.abs(bin_frequencies(n, series.fs))
    eps = 1e-12 * series.fs
    keep = (f >= band.f_lo - eps) & (f <= band.f_hi + eps)
    out = idft(np.where(keep, coeffs, 0.0))
    scale = max(1.0, float(np.abs(series.values).max()))
    residual = float(np.abs(out.imag).max()) if n else 0.0
    assert residual < 1e-9 * scale, f"band-pass left an imaginary residual of {residual:g}"
    return RespSeries(out.real, series.fs)


# --------------------------------------------------------------------------
# peaks and classification


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; flat tops report their middle sample."""
    peaks = []
    i, n = 1, len(x)
    while i < n - 1:
        if x[i - 1] < x[i]:
            j = i
            while j + 1 < n - 1 and x[j + 1] == x[i]:
                j += 1
            if x[j + 1] < x[i]:
                peaks.append((i + j) // 2)
                i = j
        i += 1
    return np.asarray(peaks, dtype=np.intp)


def peak_prominences(x: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Height of each peak above the higher of its two bounding valleys.

    Each side's valley is the minimum between the peak and the nearest
    strictly higher sample on that side (or the series end).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(len(peaks))
    for n, p in enumerate(peaks):
        h = x[p]
        left = p
        left_min = h
        while left > 0 and x[left - 1] <= h:
            left -= 1
            left_min = min(left_min, x[left])
        right = p
        right_min = h
        while right < len(x) - 1 and x[right + 1] <= h:
            right += 1
            right_min = min(right_min, x[right])
        out[n] = h - max(left_min, right_min)
    return out


def find_breath_peaks(series: RespSeries, min_prominence_mult: float = 0.5, min_spacing: float = 1.0) -> np.ndarray:
    """Indices of breath maxima.

    Peaks need prominence of at least ``min_prominence_mult`` times the
    series standard deviation.  Of two survivors closer than
    ``min_spacing`` seconds the higher one wins (the earlier one on ties).
    """
    x = series.values
    sd = float(np.std(x))
    if len(x) < 3 or sd == 0:
        return np.zeros(0, dtype=np.intp)
    peaks = _local_maxima(x)
    if not len(peaks):
        return peaks
    prom = peak_prominences(x, peaks)
    peaks = peaks[prom >= min_prominence_mult * sd]
    order = np.argsort(-x[peaks], kind="stable")
    kept: list[int] = []
    for p in peaks[order]:
        if all(abs(p - q) / series.fs >= min_spacing for q in kept):
            kept.append(int(p))
    return np.asarray(sorted(kept), dtype=np.intp)


def count_breaths(series: RespSeries, min_prominence_mult: float = 0.5, min_spacing: float = 1.0) -> int:
    return int(len(find_breath_peaks(series, min_prominence_mult, min_spacing)))


def classify(count: int, duration: float, age_band: str = "unspecified") -> str:
    """Place a breath count against the normal range for ``age_band``."""
    if not duration > 0:
        raise ParameterError("duration must be positive")
    if age_band not in AGE_BANDS:
        raise ParameterError(f"age_band must be one of {AGE_BANDS}, got {age_band!r}")
    if age_band == "unspecified":
        rate, (lo, hi) = count * 30.0 / duration, UNSPECIFIED_30S
    else:
        rate, (lo, hi) = count * 60.0 / duration, NORMAL_BPM[age_band]
    if rate < lo:
        return "below_range"
    if rate > hi:
        return "above_range"
    return "normal"


def max_excursion(series: RespSeries) -> float:
    """Largest displacement towards the camera relative to the zero-mean rest level."""
    if not len(series):
        return 0.0
    return max(0.0, float(series.values.max()))


@dataclass(frozen=True)
class BreathReport:
    breath_count: int
    duration: float
    age_band: str
    classification: str
    max_excursion: float

    @property
    def bpm(self) -> float:
        return self.breath_count * 60.0 / self.duration

    def as_dict(self) -> dict:
        return {
            "breath_count": self.breath_count,
            "duration_s": self.duration,
            "bpm": self.bpm,
            "age_band": self.age_band,
            "classification": self.classification,
            "max_excursion_mm": self.max_excursion,
        }


def choose_reference(deltas: np.ndarray, fs: float, window_s: float) -> int:
    """Frame in the first ``window_s`` seconds closest to the mid-level of that window.

    ``deltas`` are raw displacements relative to any fixed frame; NaN
    samples are ignored.
    """
    d = np.asarray(deltas, dtype=float)
    n = max(1, min(len(d), int(round(window_s * fs))))
    win = d[:n]
    ok = np.isfinite(win)
    if not ok.any():
        return 0
    mid = 0.5 * (win[ok].min() + win[ok].max())
    dist = np.where(ok, np.abs(win - mid), np.inf)
    return int(np.argmin(dist))
