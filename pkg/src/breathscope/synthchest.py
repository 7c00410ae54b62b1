"""Synthetic breathing-chest stereo sequences with exact ground truth.

The scene is a flat backdrop at ``wall_depth`` with an ellipsoidal cap (the
chest) rising ``chest_height`` mm towards the camera.  Breathing displaces
the cap along the optical axis by ``envelope(x, y) * g(t)``, where the
envelope is 1 over most of the chest and falls to 0 at its rim.  Images are
rendered directly in rectified geometry by casting each pixel's ray onto the
height field and sampling a seeded value-noise texture attached to the
surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calib import StereoRig
from .errors import ParameterError
from .frameio import FrameSequence, StereoFrame

WAVEFORMS = ("sine", "half_rectified", "two_tone", "switch")
BACKGROUND = np.inf


@dataclass(frozen=True)
class ChestModel:
    """Geometry, motion and texture of the synthetic subject (mm, Hz, s).

    ``standoff`` is the depth of the chest apex.  Waveforms:

    * ``sine``: ``A sin(2 pi f t)``
    * ``half_rectified``: ``A max(0, sin(2 pi f t))`` (quick partial breaths)
    * ``two_tone``: ``A sin(2 pi f t) + A2 sin(2 pi f2 t)``
    * ``switch``: ``sine`` with ``(A, f)`` up to ``switch_time``, then the
      ``half_rectified`` pattern with ``(A2, f2)``; the switch happens on a
      completed cycle so the displacement stays continuous.
    """

    standoff: float = 900.0
    chest_height: float = 100.0
    semi_axes: tuple[float, float] = (180.0, 110.0)
    amplitude: float = 6.0
    frequency: float = 0.3
    waveform: str = "sine"
    amplitude2: float = 0.0
    frequency2: float = 0.0
    switch_time: float = 0.0
    # (time s, peak mm, width s) gaussian pulses added to the displacement
    transients: tuple[tuple[float, float, float], ...] = ()
    envelope_power: float = 8.0
    extent: tuple[float, float] = (1500.0, 1200.0)
    texture_seed: int = 0
    texture_cells: tuple[float, ...] = (14.0, 7.0, 3.5)
    contrast: float = 1.0

    def __post_init__(self) -> None:
        if self.amplitude < 0 or self.amplitude2 < 0:
            raise ParameterError("amplitudes must be >= 0")
        if self.waveform not in WAVEFORMS:
            raise ParameterError(f"waveform must be one of {WAVEFORMS}")
        if not 300 < self.standoff < 2000 or not 300 < self.wall_depth < 2000:
            raise ParameterError("scene depth must lie within (300, 2000) mm")
        if not self.frequency > 0:
            raise ParameterError("breathing frequency must be positive")
        if self.waveform in ("two_tone", "switch") and not self.frequency2 > 0:
            raise ParameterError(f"waveform {self.waveform!r} needs frequency2 > 0")

    @property
    def wall_depth(self) -> float:
        return self.standoff + self.chest_height

    @property
    def max_frequency(self) -> float:
        return max(self.frequency, self.frequency2)

    # --- motion -----------------------------------------------------------

    @property
    def effective_switch_time(self) -> float:
        """Switch instant rounded to a whole number of first-phase cycles."""
        return round(self.switch_time * self.frequency) / self.frequency

    def displacement(self, t) -> np.ndarray:
        """Centre displacement ``g(t)`` in mm; positive is towards the camera."""
        t = np.asarray(t, dtype=float)
        a, f = self.amplitude, self.frequency
        if self.waveform == "sine":
            g = a * np.sin(2 * np.pi * f * t)
        elif self.waveform == "half_rectified":
            g = a * np.maximum(0.0, np.sin(2 * np.pi * f * t))
        elif self.waveform == "two_tone":
            g = a * np.sin(2 * np.pi * f * t) + self.amplitude2 * np.sin(2 * np.pi * self.frequency2 * t)
        else:
            ts = self.effective_switch_time
            first = a * np.sin(2 * np.pi * f * t)
            second = self.amplitude2 * np.maximum(0.0, np.sin(2 * np.pi * self.frequency2 * (t - ts)))
            g = np.where(t < ts, first, second)
        for t0, peak, width in self.transients:
            g = g + peak * np.exp(-0.5 * ((t - t0) / width) ** 2)
        return g

    # --- geometry ---------------------------------------------------------

    def _rho2(self, x, y):
        return (np.asarray(x) / self.semi_axes[0]) ** 2 + (np.asarray(y) / self.semi_axes[1]) ** 2

    def base_depth(self, x, y) -> np.ndarray:
        """Static surface depth z0 (cap on a flat backdrop)."""
        return self._surface(self._rho2(x, y), 0.0)

    def envelope(self, x, y) -> np.ndarray:
        return self._envelope(self._rho2(x, y))

    def _envelope(self, rho2):
        return np.where(rho2 < 1.0, 1.0 - np.minimum(rho2, 1.0) ** (self.envelope_power / 2), 0.0)

    def _surface(self, rho2, g: float):
        r = np.minimum(rho2, 1.0)
        q = 0.75
        top = 1.0 - np.sqrt(1.0 - q)
        cap = (np.sqrt(1.0 - q * r) - np.sqrt(1.0 - q)) / top
        z = self.wall_depth - self.chest_height * cap
        if g:
            z = z - self._envelope(rho2) * g
        return z

    def in_extent(self, x, y) -> np.ndarray:
        return (np.abs(x) <= self.extent[0] / 2) & (np.abs(y) <= self.extent[1] / 2)


def chest_depth(model: ChestModel, x, y, t: float):
    """Surface depth at lateral position ``(x, y)`` and time ``t``.

    Points outside the modelled extent return ``inf`` (background).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = model.base_depth(x, y) - model.envelope(x, y) * model.displacement(t)
    z = np.where(model.in_extent(x, y), z, BACKGROUND)
    return float(z) if z.ndim == 0 else z


# --------------------------------------------------------------------------
# texture


def _value_noise(x: np.ndarray, y: np.ndarray, cell: float, seed: int, octave: int) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1] with lattice spacing ``cell`` mm."""
    gx = x / cell
    gy = y / cell
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    fx = gx - ix
    fy = gy - iy
    sx = fx * fx * (3 - 2 * fx)
    sy = fy * fy * (3 - 2 * fy)

    def lattice(i, j):
        # integer hash so any lattice point is reproducible without a stored table
        h = (i * 374761393 + j * 668265263 + (seed * 1013 + octave) * 2147483647) & 0xFFFFFFFF
        h = ((h ^ (h >> 13)) * 1274126177) & 0xFFFFFFFF
        h = h ^ (h >> 16)
        return (h & 0xFFFFFF) / float(0xFFFFFF)

    v00 = lattice(ix, iy)
    v10 = lattice(ix + 1, iy)
    v01 = lattice(ix, iy + 1)
    v11 = lattice(ix + 1, iy + 1)
    top = v00 + (v10 - v00) * sx
    bottom = v01 + (v11 - v01) * sx
    return top + (bottom - top) * sy


def texture(model: ChestModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Intensity in [0, 255] of the surface pattern at lateral position ``(x, y)``."""
    acc = np.zeros(np.shape(x))
    weight = 0.0
    for octave, cell in enumerate(model.texture_cells):
        w = 0.5**octave
        acc += w * _value_noise(x, y, cell, model.texture_seed, octave)
        weight += w
    acc /= weight
    return np.clip(128.0 + model.contrast * 3.0 * 128.0 * (acc - 0.5), 0.0, 255.0)


# --------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class GroundTruth:
    """Per-frame truth; ``depth``/``disparity`` are ``NaN`` on background pixels."""

    t: float
    displacement: float
    depth: np.ndarray
    disparity: np.ndarray


def _check_rectified(rig: StereoRig) -> None:
    l, r = rig.left, rig.right
    same = (l.fx, l.fy, l.cx, l.cy) == (r.fx, r.fy, r.cx, r.cy) and l.fx == l.fy
    if not (
        same
        and l.k1 == l.k2 == r.k1 == r.k2 == 0
        and np.allclose(rig.rotation, np.eye(3), atol=1e-12)
        and np.allclose(rig.translation[1:], 0, atol=1e-12)
        and rig.translation[0] < 0
    ):
        raise ParameterError("render_stereo needs an ideal rectified rig (see StereoRig.rectified)")


def cast_rays(model: ChestModel, a: np.ndarray, b: np.ndarray, origin_x: float, t: float,
              tol: float = 1e-4, max_iter: int = 200) -> np.ndarray:
    """Depth along rays ``(origin_x + Z a, Z b, Z)`` hitting the height field.

    Solved by fixed-point iteration ``Z <- depth(origin_x + Z a, Z b)``.
    Rays that leave the extent or do not converge return ``NaN``.
    """
    g = float(model.displacement(t))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    z = np.full(a.shape, model.standoff, dtype=float)
    done = np.zeros(a.shape, dtype=bool)
    active = np.flatnonzero(~done)
    za, aa, ba = z.ravel()[active], a.ravel()[active], b.ravel()[active]
    for _ in range(max_iter):
        z_new = model._surface(model._rho2(origin_x + za * aa, za * ba), g)
        ok = np.abs(z_new - za) < tol
        z.ravel()[active] = z_new
        done.ravel()[active[ok]] = True
        keep = ~ok
        active, za, aa, ba = active[keep], z_new[keep], aa[keep], ba[keep]
        if not len(active):
            break
    x = origin_x + z * a
    y = z * b
    return np.where(done & model.in_extent(x, y), z, np.nan)


def _render_view(model: ChestModel, f: float, cx: float, cy: float, origin_x: float,
                 size: tuple[int, int], t: float) -> tuple[np.ndarray, np.ndarray]:
    w, h = size
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    a = (u - cx) / f
    b = (v - cy) / f
    z = cast_rays(model, a, b, origin_x, t)
    x = origin_x + np.nan_to_num(z) * a
    y = np.nan_to_num(z) * b
    intensity = np.where(np.isfinite(z), texture(model, x, y), 0.0)
    return intensity, z


def render_stereo(model: ChestModel, rig: StereoRig, size: tuple[int, int], t: float,
                  noise_sigma: float = 0.0, seed: int = 0, index: int = 0) -> tuple[StereoFrame, GroundTruth]:
    """Render one rectified stereo pair at time ``t``.

    The right view casts its own rays from the right camera centre onto the
    same surface, which is equivalent to projecting the left hit points into
    it but leaves no holes.  Gaussian intensity noise is seeded from
    ``seed`` and ``index``.
    """
    _check_rectified(rig)
    f, cx, cy, baseline = rig.left.fx, rig.left.cx, rig.left.cy, rig.baseline
    left, z_left = _render_view(model, f, cx, cy, 0.0, size, t)
    right, _ = _render_view(model, f, cx, cy, baseline, size, t)
    if noise_sigma > 0:
        rng = np.random.default_rng([seed, index])
        left = left + rng.normal(0.0, noise_sigma, left.shape)
        right = right + rng.normal(0.0, noise_sigma, right.shape)
    to_u8 = lambda img: np.clip(np.rint(img), 0, 255).astype(np.uint8)
    truth = GroundTruth(
        t=t,
        displacement=float(model.displacement(t)),
        depth=z_left,
        disparity=f * baseline / z_left,
    )
    frame = StereoFrame(to_u8(left), to_u8(right), index, t)
    return frame, truth


def generate_sequence(model: ChestModel, rig: StereoRig, size: tuple[int, int], fps: float, duration: float,
                      noise_sigma: float = 0.0, seed: int = 0,
                      keep_truth_maps: bool = False) -> tuple[FrameSequence, list[GroundTruth]]:
    """Render ``fps * duration`` frames at ``t = i / fps``.

    Ground-truth depth and disparity maps are dropped unless
    ``keep_truth_maps`` is set (they dominate memory for long sequences).
    """
    from ._parallel import ordered_map

    if not fps > 2 * model.max_frequency:
        raise ParameterError(f"fps {fps} violates Nyquist for breathing at {model.max_frequency} Hz")
    n = int(round(fps * duration))
    if n < 1:
        raise ParameterError("duration too short for a single frame")

    def one(i: int):
        frame, truth = render_stereo(model, rig, size, i / fps, noise_sigma, seed, i)
        if not keep_truth_maps:
            truth = replace(truth, depth=np.empty((0, 0)), disparity=np.empty((0, 0)))
        return frame, truth

    rendered = ordered_map(one, range(n))
    seq = FrameSequence(tuple(fr for fr, _ in rendered), fps)
    return seq, [gt for _, gt in rendered]


def write_ground_truth_csv(path: str | Path, truths: list[GroundTruth]) -> None:
    lines = ["t_s,displacement_mm"]
    lines += [f"{gt.t!r},{gt.displacement!r}" for gt in truths]
    Path(path).write_text("\n".join(lines) + "\n")


def surface_cloud(model: ChestModel, n_points: int = 3000, t: float = 0.0, collar: float = 1.3,
                  seed: int = 0) -> np.ndarray:
    """Random surface samples ``(N, 3)`` over the chest and a rim of backdrop.

    Points are uniform in the ellipse ``collar`` times the chest semi-axes.
    Random rather than lattice sampling keeps ICP free of grid-snapping
    minima.
    """
    rng = np.random.default_rng(seed)
    ax, ay = model.semi_axes[0] * collar, model.semi_axes[1] * collar
    chunks = []
    have = 0
    while have < n_points:
        x = rng.uniform(-ax, ax, 2 * n_points)
        y = rng.uniform(-ay, ay, 2 * n_points)
        keep = (x / ax) ** 2 + (y / ay) ** 2 <= 1.0
        chunks.append(np.column_stack([x[keep], y[keep]]))
        have += int(keep.sum())
    xy = np.concatenate(chunks)[:n_points]
    return np.column_stack([xy, chest_depth(model, xy[:, 0], xy[:, 1], t)])


# --------------------------------------------------------------------------
# scenario presets

SCENARIOS = ("normal", "deep", "shallow", "mixed", "cough")

# rig and capture used for every synthetic dataset
SYNTH_F = 480.0
SYNTH_BASELINE = 100.0
SYNTH_SIZE = (320, 240)
SYNTH_FPS = 15.0
SYNTH_DURATION = 60.0
SYNTH_NOISE = 2.0


def synthetic_rig(size: tuple[int, int] = SYNTH_SIZE) -> StereoRig:
    w, h = size
    return StereoRig.rectified(SYNTH_F * w / SYNTH_SIZE[0], (w - 1) / 2, (h - 1) / 2, SYNTH_BASELINE)


def scenario_model(name: str, duration: float = SYNTH_DURATION, seed: int = 0, **overrides) -> ChestModel:
    """Preset chest motion for a named breathing scenario.

    ``normal`` 6 mm at 0.33 Hz; ``deep`` 12 mm at 0.15 Hz; ``shallow`` quick
    2.5 mm half-rectified breaths at 0.7 Hz; ``mixed`` normal for the first
    half then shallow; ``cough`` normal plus two seeded 8 mm transients.
    """
    if name not in SCENARIOS:
        raise ParameterError(f"scenario must be one of {SCENARIOS}, got {name!r}")
    base = dict(texture_seed=seed)
    if name == "normal":
        params = dict(amplitude=6.0, frequency=0.33)
    elif name == "deep":
        params = dict(amplitude=12.0, frequency=0.15)
    elif name == "shallow":
        params = dict(amplitude=2.5, frequency=0.7, waveform="half_rectified")
    elif name == "mixed":
        params = dict(amplitude=6.0, frequency=0.33, waveform="switch", amplitude2=2.5, frequency2=0.7,
                      switch_time=duration / 2)
    else:
        rng = np.random.default_rng([seed, 7])
        times = np.sort(rng.uniform(0.1 * duration, 0.9 * duration, 2))
        params = dict(amplitude=6.0, frequency=0.33, transients=tuple((float(t), 8.0, 0.12) for t in times))
    return ChestModel(**{**base, **params, **overrides})


def chest_roi(model: ChestModel) -> str:
    """ROI string covering the central half of the chest in each direction."""
    ax, ay = model.semi_axes
    return f"{-ax / 2:g}:{-ay / 2:g}:300:{ax / 2:g}:{ay / 2:g}:2000"


def analysis_config(model: ChestModel) -> dict:
    """Pipeline settings matched to the synthetic rig and scene."""
    f, b = SYNTH_F, SYNTH_BASELINE
    d_far = f * b / (model.wall_depth + 30)
    d_near = f * b / (model.standoff - 30)
    return {
        "min_disparity": int(np.floor(d_far / 8) * 8),
        "max_disparity": int(np.ceil(d_near / 8) * 8),
        "cloud_stride": 2,
        "roi": chest_roi(model),
    }
