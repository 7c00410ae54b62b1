"""End-to-end analysis: stereo frames in, breathing report out.

Stage order: rectify, disparity, filter, triangulate, range cut, denoise,
ICP to the reference frame, region-of-interest crop, depth grid, depth delta,
series, spectrum, band-pass, peak count, classification.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._parallel import ordered_map
from .calib import RectificationMaps, StereoRig, compute_rectification, is_identity_map, rectify_image
from .cloud import NeighborIndex, PointCloud, RoiBox, crop_roi, denoise_statistical, remove_invalid, reproject
from .errors import (
    AlignmentError,
    BreathscopeError,
    ConfigError,
    CoverageError,
    DegeneracyError,
    NoSignalError,
    ParameterError,
)
from .frameio import FrameSequence, StereoFrame, downsample_sequence
from .icp import IcpParams, RigidTransform, icp_align
from .respsignal import (
    AGE_BANDS,
    BandSelection,
    BreathReport,
    DepthGrid,
    Lattice,
    RespSeries,
    Spectrum,
    bandpass,
    build_series,
    choose_reference,
    classify,
    count_breaths,
    depth_delta,
    depth_grid_from_cloud,
    fft,
    find_breath_peaks,
    max_excursion,
    select_band,
)
from .stereo import DisparityMap, MatchParams, compute_disparity, filter_disparity

log = logging.getLogger(__name__)


class StageError(BreathscopeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    # block matching
    min_disparity: int = 0
    max_disparity: int = 64
    block_radius: int = 5
    uniqueness_ratio: float = 1.05
    lr_consistency_tol: float = 1.0
    texture_threshold: float = 10.0
    # disparity post-filter
    median_radius: int = 1
    speckle_max_area: int = 100
    speckle_tol: float = 1.0
    # clouds
    cloud_stride: int = 1
    z_min: float = 300.0
    z_max: float = 2000.0
    denoise_k: int = 16
    denoise_stddev_mult: float = 1.5
    # registration
    icp_max_iterations: int = 50
    icp_rmse_tol: float = 1e-4
    icp_reject_mult: float = 3.0
    icp_min_correspondences: int = 100
    icp_max_source_points: int | None = 3000
    icp_accelerate: bool = True
    # depth signal
    grid_cell: float = 10.0
    roi: str = "full"
    min_overlap: float = 0.25
    max_failed_fraction: float = 0.2
    reference: str = "first"
    reference_window_s: float = 10.0
    downsample: int = 1
    # spectrum and peaks
    band: str = "auto"
    plausible_lo: float = 0.08
    plausible_hi: float = 1.5
    band_margin: float = 0.1
    peak_prominence_mult: float = 0.5
    peak_min_spacing: float = 1.0
    age_band: str = "unspecified"

    def __post_init__(self) -> None:
        if self.reference not in ("first", "auto"):
            raise ConfigError(f"reference must be 'first' or 'auto', got {self.reference!r}")
        if self.age_band not in AGE_BANDS:
            raise ConfigError(f"age_band must be one of {AGE_BANDS}, got {self.age_band!r}")
        if self.downsample < 1:
            raise ConfigError("downsample must be >= 1")
        if not self.grid_cell > 0:
            raise ConfigError("grid_cell must be positive")
        if not 0 < self.plausible_lo < self.plausible_hi:
            raise ConfigError("plausible band must satisfy 0 < lo < hi")
        RoiBox.parse(self.roi)
        self.fixed_band()
        self.match_params()

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **changes) -> "PipelineConfig":
        return PipelineConfig.from_dict({**self.to_dict(), **changes})

    def match_params(self) -> MatchParams:
        return MatchParams(
            self.min_disparity,
            self.max_disparity,
            self.block_radius,
            self.uniqueness_ratio,
            self.lr_consistency_tol,
            self.texture_threshold,
        )

    def icp_params(self) -> IcpParams:
        return IcpParams(
            self.icp_max_iterations,
            self.icp_rmse_tol,
            self.icp_reject_mult,
            self.icp_min_correspondences,
            self.icp_max_source_points,
            self.icp_accelerate,
        )

    def roi_box(self) -> RoiBox:
        return RoiBox.parse(self.roi)

    def fixed_band(self) -> BandSelection | None:
        if self.band == "auto":
            return None
        try:
            lo, hi = (float(v) for v in self.band.split(":"))
        except ValueError as exc:
            raise ConfigError(f"band must be 'auto' or 'LO:HI', got {self.band!r}") from exc
        if not 0 < lo < hi:
            raise ConfigError(f"band must satisfy 0 < LO < HI, got {self.band!r}")
        return BandSelection(lo, hi)


# --------------------------------------------------------------------------
# per-frame stages


@dataclass
class FrameResult:
    index: int
    valid_fraction: float = 0.0
    n_points: int = 0
    icp_iterations: int = 0
    icp_rmse: float = 0.0
    icp_converged: bool = False
    grid: DepthGrid | None = None
    error: str | None = None


class FrameProcessor:
    """Per-frame work shared by the analysis and the PLY export."""

    def __init__(self, rig: StereoRig, image_size: tuple[int, int], config: PipelineConfig) -> None:
        self.config = config
        self.rect = compute_rectification(rig, image_size)
        self._identity = is_identity_map(*self.rect.left) and is_identity_map(*self.rect.right)
        self.match = config.match_params()

    def rectify(self, frame: StereoFrame) -> tuple[np.ndarray, np.ndarray]:
        if self._identity:
            return frame.left, frame.right
        return rectify_image(frame.left, self.rect.left), rectify_image(frame.right, self.rect.right)

    def disparity(self, frame: StereoFrame) -> DisparityMap:
        left, right = self.rectify(frame)
        raw = compute_disparity(left, right, self.match)
        c = self.config
        return filter_disparity(raw, c.median_radius, c.speckle_max_area, c.speckle_tol)

    def cloud(self, frame: StereoFrame) -> tuple[PointCloud, float]:
        """Denoised camera-frame cloud and the valid-disparity fraction."""
        c = self.config
        dmap = self.disparity(frame)
        cloud = remove_invalid(reproject(dmap, self.rect, c.cloud_stride), (c.z_min, c.z_max))
        if len(cloud) > c.denoise_k:
            cloud = denoise_statistical(cloud, c.denoise_k, c.denoise_stddev_mult)
        return cloud, dmap.valid_fraction()


@dataclass
class AnalysisResult:
    raw: RespSeries
    filtered: RespSeries
    spectrum: Spectrum
    band: BandSelection
    peaks: np.ndarray
    breath: BreathReport
    report: dict
    frames: list[FrameResult] = field(repr=False, default_factory=list)


def _icp_record(res) -> tuple[int, float, bool]:
    return res.iterations, res.rmse, res.converged


def process_frames(seq: FrameSequence, rig: StereoRig, config: PipelineConfig,
                   workers: int | None = None) -> tuple[list[FrameResult], Lattice]:
    """Run every per-frame stage; frame 0 is the registration reference."""
    if not len(seq):
        raise StageError("load", "sequence has no frames")
    proc = FrameProcessor(rig, seq.image_size, config)
    roi = config.roi_box()
    icp_params = config.icp_params()

    ref_cloud, ref_valid = proc.cloud(seq[0])
    if len(ref_cloud) < icp_params.min_correspondences:
        raise StageError("cloud", f"reference frame yields only {len(ref_cloud)} points")
    ref_index = NeighborIndex(ref_cloud.points)
    ref_roi = crop_roi(ref_cloud, roi)
    if not len(ref_roi):
        raise StageError("roi", "region of interest contains no reference points")
    lattice = Lattice.covering(ref_roi.points, config.grid_cell)

    def one(frame: StereoFrame) -> FrameResult:
        out = FrameResult(frame.index)
        try:
            if frame.index == 0:
                cloud, out.valid_fraction = ref_cloud, ref_valid
                transform = RigidTransform.identity()
                out.icp_converged = True
            else:
                cloud, out.valid_fraction = proc.cloud(frame)
                res = icp_align(cloud, ref_index, icp_params)
                transform = res.transform
                out.icp_iterations, out.icp_rmse, out.icp_converged = _icp_record(res)
            out.n_points = len(cloud)
            aligned = crop_roi(cloud.transformed(transform.rotation, transform.translation), roi)
            out.grid = depth_grid_from_cloud(aligned, lattice)
        except (AlignmentError, DegeneracyError) as exc:
            out.error = f"registration: {exc}"
        return out

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        results = ordered_map(one, seq.frames, workers)
    return results, lattice


def _deltas(results: list[FrameResult], ref: int, roi: RoiBox, min_overlap: float) -> tuple[np.ndarray, list[int]]:
    ref_grid = results[ref].grid
    vals = np.full(len(results), np.nan)
    failed = []
    for r in results:
        if r.grid is None or ref_grid is None:
            failed.append(r.index)
            continue
        try:
            vals[r.index] = depth_delta(r.grid, ref_grid, roi, min_overlap)
        except CoverageError:
            failed.append(r.index)
    return vals, failed


def _fill_gaps(vals: np.ndarray) -> np.ndarray:
    ok = np.isfinite(vals)
    if ok.all():
        return vals
    idx = np.arange(len(vals))
    return np.interp(idx, idx[ok], vals[ok])


def _band_dict(band: BandSelection | None) -> dict | None:
    if band is None:
        return None
    return {"f_lo_hz": band.f_lo, "f_hi_hz": band.f_hi, "peak_hz": band.peak_hz}


def analyze_series(raw_deltas: np.ndarray, fs: float, config: PipelineConfig) -> tuple[
    RespSeries, RespSeries, Spectrum, BandSelection, np.ndarray, BreathReport, dict
]:
    """Spectral stage on a displacement series; returns the pieces plus report fields."""
    c = config
    raw = build_series(raw_deltas, fs)
    spec = fft(raw)
    plausible = (c.plausible_lo, min(c.plausible_hi, fs / 2))
    warnings_out: list[str] = []
    info: dict = {}

    halves = []
    if c.band == "auto":
        try:
            band = select_band(spec, plausible, c.band_margin)
        except NoSignalError as exc:
            raise StageError("band", str(exc)) from exc
        for part in raw.split():
            try:
                halves.append(select_band(fft(build_series(part.values, fs)), plausible, c.band_margin)
                              if len(part) >= 2 else None)
            except NoSignalError:
                halves.append(None)
        mixed = (
            all(h is not None for h in halves)
            and abs(halves[0].peak_hz - halves[1].peak_hz) > 2 * c.band_margin  # type: ignore[union-attr]
        )
        if mixed:
            # two breathing patterns: pass both bands so neither half is erased
            band = BandSelection(
                min(h.f_lo for h in halves), max(h.f_hi for h in halves), band.peak_hz  # type: ignore[union-attr]
            )
            warnings_out.append("breathing pattern changes between the two halves of the recording")
    else:
        band = c.fixed_band()  # type: ignore[assignment]
        band = BandSelection(band.f_lo, min(band.f_hi, fs / 2))
        mixed = False

    filtered = bandpass(raw, band)
    peaks = find_breath_peaks(filtered, c.peak_prominence_mult, c.peak_min_spacing)
    breath = BreathReport(
        breath_count=count_breaths(filtered, c.peak_prominence_mult, c.peak_min_spacing),
        duration=raw.duration,
        age_band=c.age_band,
        classification="",
        max_excursion=max_excursion(filtered),
    )
    breath = BreathReport(
        breath.breath_count,
        breath.duration,
        breath.age_band,
        classify(breath.breath_count, breath.duration, c.age_band),
        breath.max_excursion,
    )
    if raw.duration < 2.0 / c.plausible_lo:
        warnings_out.append(
            f"insufficient duration: {raw.duration:g} s is shorter than two periods at {c.plausible_lo:g} Hz"
        )
    info["band"] = _band_dict(band)
    info["half_bands"] = [_band_dict(h) for h in halves]
    info["mixed_breathing"] = bool(mixed)
    info["warnings"] = warnings_out
    return raw, filtered, spec, band, peaks, breath, info


def analyze(seq: FrameSequence, rig: StereoRig, config: PipelineConfig | None = None,
            workers: int | None = None) -> AnalysisResult:
    """Run the full pipeline on an in-memory sequence."""
    config = config or PipelineConfig()
    if config.downsample > 1:
        seq = downsample_sequence(seq, config.downsample)
    results, lattice = process_frames(seq, rig, config, workers)
    roi = config.roi_box()
    warn: list[str] = [f"frame {r.index}: {r.error}" for r in results if r.error]

    deltas, failed = _deltas(results, 0, roi, config.min_overlap)
    ref_index = 0
    if config.reference == "auto":
        ref_index = choose_reference(deltas, seq.fps, config.reference_window_s)
        if ref_index != 0:
            deltas, failed = _deltas(results, ref_index, roi, config.min_overlap)
    if len(failed) > config.max_failed_fraction * len(results):
        raise StageError("depth", f"{len(failed)} of {len(results)} frames lack usable depth coverage")
    for i in failed:
        if not results[i].error:
            warn.append(f"frame {i}: insufficient overlap with the reference surface; interpolated")
    deltas = _fill_gaps(deltas)

    raw, filtered, spec, band, peaks, breath, info = analyze_series(deltas, seq.fps, config)
    warn.extend(info.pop("warnings"))

    report = {
        **breath.as_dict(),
        "selected_band": info["band"],
        "half_bands": info["half_bands"],
        "mixed_breathing": info["mixed_breathing"],
        "reference_frame": ref_index,
        "frames": len(results),
        "fps": seq.fps,
        "grid": {"cell_mm": lattice.cell, "nx": lattice.nx, "ny": lattice.ny},
        "failed_frames": failed,
        "diagnostics": [
            {
                "frame": r.index,
                "valid_pixel_fraction": r.valid_fraction,
                "points": r.n_points,
                "icp_iterations": r.icp_iterations,
                "icp_rmse_mm": r.icp_rmse,
                "icp_converged": r.icp_converged,
            }
            for r in results
        ],
        "warnings": warn,
        "config": config.to_dict(),
    }
    return AnalysisResult(raw, filtered, spec, band, peaks, breath, report, results)


# --------------------------------------------------------------------------
# file outputs


def _num(v: float) -> str:
    return repr(float(v))


def series_csv(result: AnalysisResult) -> str:
    lines = ["t_s,raw_mm,filtered_mm"]
    for t, r, f in zip(result.raw.t, result.raw.values, result.filtered.values):
        lines.append(f"{_num(t)},{_num(r)},{_num(f)}")
    return "\n".join(lines) + "\n"


def spectrum_csv(spec: Spectrum) -> str:
    freqs, mags = spec.one_sided()
    lines = ["freq_hz,magnitude"] + [f"{_num(f)},{_num(m)}" for f, m in zip(freqs, mags)]
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


_PHRASES = {
    "normal": "within the expected range for this age group",
    "above_range": "ABOVE the expected range; a raised breathing rate can be a symptom worth discussing with a clinician",
    "below_range": "BELOW the expected range; consider repeating the recording or consulting a clinician",
}


def report_text(report: dict) -> str:
    band = report["selected_band"]
    lines = [
        "Breathing analysis report",
        "=========================",
        f"Breaths counted : {report['breath_count']}",
        f"Duration        : {report['duration_s']:.1f} s",
        f"Rate            : {report['bpm']:.1f} breaths/min",
        f"Age band        : {report['age_band']}",
        f"Assessment      : {_PHRASES[report['classification']]}",
        f"Max excursion   : {report['max_excursion_mm']:.2f} mm",
        f"Breathing band  : {band['f_lo_hz']:.3f} - {band['f_hi_hz']:.3f} Hz",
    ]
    if report["mixed_breathing"]:
        lines.append("Pattern         : breathing pattern changes during the recording")
    if report["warnings"]:
        lines.append("")
        lines.append("Warnings:")
        lines += [f"  - {w}" for w in report["warnings"]]
    lines += ["", "Not a medical device. This report is not a diagnosis."]
    return "\n".join(lines) + "\n"


def plot_svg(result: AnalysisResult, width: int = 900, height: int = 300) -> str:
    """Filtered displacement against time with detected breaths marked."""
    t = result.filtered.t
    y = result.filtered.values
    raw = result.raw.values
    pad = 40
    t_max = max(float(t[-1]) if len(t) else 1.0, 1e-9)
    span = max(float(np.abs(np.concatenate([y, raw])).max()) if len(y) else 1.0, 1e-9)

    def px(tt, yy):
        return pad + tt / t_max * (width - 2 * pad), height / 2 - yy / span * (height / 2 - pad)

    def poly(vals, style):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in (px(tt, vv) for tt, vv in zip(t, vals)))
        return f'<polyline fill="none" {style} points="{pts}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height / 2}" x2="{width - pad}" y2="{height / 2}" stroke="#999" stroke-width="0.5"/>',
        poly(raw, 'stroke="#bbb" stroke-width="0.7"'),
        poly(y, 'stroke="#1f4e9c" stroke-width="1.5"'),
    ]
    for p in result.peaks:
        cx, cy = px(t[p], y[p])
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="#c0392b"/>')
    parts.append(
        f'<text x="{pad}" y="{pad / 2 + 4}" font-family="sans-serif" font-size="12">'
        f"chest displacement (mm, +{span:.2f} at top) vs time (0-{t_max:.1f} s); "
        f"{len(result.peaks)} breaths</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_outputs(result: AnalysisResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "series.csv").write_text(series_csv(result))
    (out / "spectrum.csv").write_text(spectrum_csv(result.spectrum))
    (out / "report.json").write_text(report_json(result.report))
    (out / "report.txt").write_text(report_text(result.report))
    (out / "plot.svg").write_text(plot_svg(result))
