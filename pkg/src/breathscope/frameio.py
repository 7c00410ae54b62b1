"""Stereo image-sequence ingestion.

Images are plain ``numpy`` arrays of shape ``(height, width)`` and dtype
``uint8``.  A :class:`FrameSequence` is built either from a directory of
numbered frames described by a small ``key = value`` manifest, or in memory
(for example by :mod:`breathscope.synthchest`).

Manifest keys::

    fps = 30
    layout = side_by_side          # or: separate
    pattern = frame_{n}.pgm        # side_by_side
    pattern_left = left_{n:04d}.pgm    # separate
    pattern_right = right_{n:04d}.pgm

Video files are not decoded here; extract frames with an external tool first
(e.g. ``ffmpeg -i in.mp4 -pix_fmt gray frame_%d.pgm``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._parallel import ordered_map
from .errors import ConfigError, FormatError, ParameterError, SequenceError

LAYOUTS = ("side_by_side", "separate")


def as_gray_image(data: np.ndarray) -> np.ndarray:
    """Validate ``data`` as an 8-bit grayscale image and return it as such."""
    img = np.asarray(data)
    if img.ndim != 2:
        raise FormatError(f"grayscale image must be 2-D, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise FormatError("image must be at least 1x1")
    if img.dtype != np.uint8:
        if not np.issubdtype(img.dtype, np.integer) or img.min() < 0 or img.max() > 255:
            raise FormatError(f"expected 8-bit intensities, got dtype {img.dtype}")
        img = img.astype(np.uint8)
    return img


@dataclass(frozen=True)
class StereoFrame:
    left: np.ndarray
    right: np.ndarray
    index: int
    timestamp: float

    def __post_init__(self) -> None:
        if self.left.shape != self.right.shape:
            raise FormatError(
                f"left/right size mismatch: {self.left.shape} vs {self.right.shape}"
            )


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[StereoFrame, ...]
    fps: float

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        for expected, frame in enumerate(self.frames):
            if frame.index != expected:
                raise SequenceError(f"frame indices must run 0..n-1; got {frame.index} at {expected}")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> StereoFrame:
        return self.frames[i]

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps

    @property
    def image_size(self) -> tuple[int, int]:
        """``(width, height)`` of each view."""
        if not self.frames:
            raise SequenceError("empty sequence has no image size")
        h, w = self.frames[0].left.shape
        return w, h

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[np.ndarray, np.ndarray]], fps: float) -> "FrameSequence":
        frames = tuple(
            StereoFrame(as_gray_image(l), as_gray_image(r), i, i / fps)
            for i, (l, r) in enumerate(pairs)
        )
        if frames:
            shape = frames[0].left.shape
            for f in frames:
                if f.left.shape != shape:
                    raise FormatError(f"frame {f.index} has size {f.left.shape}, expected {shape}")
        return cls(frames, fps)


# --------------------------------------------------------------------------
# image files


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(int(buf[start:pos]))
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM.  8-bit files give ``uint8``, 16-bit ``uint16``."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    (width, height, maxval), offset = _pgm_tokens(buf, 3)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad PGM header")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    if len(buf) - offset < width * height * dtype.itemsize:
        raise FormatError(f"{path}: truncated PGM raster")
    raster = np.frombuffer(buf, dtype=dtype, count=width * height, offset=offset)
    raster = raster.reshape(height, width)
    return raster.copy() if maxval < 256 else raster.astype(np.uint16)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a P5 PGM; ``uint16`` input is written with maxval 65535."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError("PGM image must be 2-D")
    if img.dtype == np.uint16:
        maxval, raster = 65535, img.astype(">u2").tobytes()
    else:
        maxval, raster = 255, as_gray_image(img).tobytes()
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + raster)


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img = read_pgm(path)
        if img.dtype != np.uint8:
            raise FormatError(f"{path}: frames must be 8-bit")
        return img
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode != "L":
                raise FormatError(f"{path}: PNG must be 8-bit grayscale, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    raise FormatError(f"{path}: unsupported image type")


# --------------------------------------------------------------------------
# manifest + directory loading


@dataclass(frozen=True)
class SequenceManifest:
    fps: float
    layout: str = "side_by_side"
    pattern: str | None = None
    pattern_left: str | None = None
    pattern_right: str | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.layout == "side_by_side" and not self.pattern:
            raise ConfigError("side_by_side layout requires 'pattern'")
        if self.layout == "separate" and not (self.pattern_left and self.pattern_right):
            raise ConfigError("separate layout requires 'pattern_left' and 'pattern_right'")

    @classmethod
    def parse(cls, text: str) -> "SequenceManifest":
        values = parse_key_values(text)
        if "fps" not in values:
            raise ConfigError("manifest is missing key 'fps'")
        known = {"fps", "layout", "pattern", "pattern_left", "pattern_right"}
        try:
            fps = float(values["fps"])
        except ValueError as exc:
            raise FormatError(f"fps is not a number: {values['fps']!r}") from exc
        return cls(
            fps=fps,
            layout=values.get("layout", "side_by_side"),
            pattern=values.get("pattern"),
            pattern_left=values.get("pattern_left"),
            pattern_right=values.get("pattern_right"),
            extra={k: v for k, v in values.items() if k not in known},
        )

    @classmethod
    def load(cls, path: str | Path) -> "SequenceManifest":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        lines = [f"fps = {self.fps:g}", f"layout = {self.layout}"]
        if self.layout == "side_by_side":
            lines.append(f"pattern = {self.pattern}")
        else:
            lines += [f"pattern_left = {self.pattern_left}", f"pattern_right = {self.pattern_right}"]
        return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _pattern_regex(pattern: str) -> re.Pattern[str]:
    m = re.search(r"\{n(?::[^}]*)?\}", pattern)
    if m is None:
        raise ConfigError(f"pattern {pattern!r} has no {{n}} placeholder")
    return re.compile(re.escape(pattern[: m.start()]) + r"(\d+)" + re.escape(pattern[m.end() :]) + r"\Z")


def _numbered_files(directory: Path, pattern: str) -> dict[int, Path]:
    rx = _pattern_regex(pattern)
    found: dict[int, Path] = {}
    for p in directory.iterdir():
        m = rx.match(p.name)
        if m:
            n = int(m.group(1))
            if n in found:
                raise SequenceError(f"frame number {n} matched twice ({found[n].name}, {p.name})")
            found[n] = p
    if not found:
        raise SequenceError(f"no files in {directory} match {pattern!r}")
    numbers = sorted(found)
    missing = sorted(set(range(numbers[0], numbers[-1] + 1)) - set(numbers))
    if missing:
        raise SequenceError(f"frame numbers missing from {pattern!r}: {missing[:10]}")
    return found


def split_side_by_side(composite: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a composite stereo frame into its left and right halves."""
    img = as_gray_image(composite)
    w = img.shape[1]
    if w % 2:
        raise FormatError(f"side-by-side frame needs even width, got {w}")
    return img[:, : w // 2].copy(), img[:, w // 2 :].copy()


def load_frame_sequence(directory: str | Path, manifest: SequenceManifest | None = None) -> FrameSequence:
    """Load numbered frames from ``directory``.

    If ``manifest`` is omitted, ``directory/manifest.txt`` is read.
    """
    directory = Path(directory)
    if manifest is None:
        manifest = SequenceManifest.load(directory / "manifest.txt")

    if manifest.layout == "side_by_side":
        files = _numbered_files(directory, manifest.pattern)  # type: ignore[arg-type]
        order = sorted(files)

        def load(n: int) -> tuple[np.ndarray, np.ndarray]:
            return split_side_by_side(read_image(files[n]))

    else:
        lefts = _numbered_files(directory, manifest.pattern_left)  # type: ignore[arg-type]
        rights = _numbered_files(directory, manifest.pattern_right)  # type: ignore[arg-type]
        if sorted(lefts) != sorted(rights):
            raise SequenceError("left and right frame numbers differ")
        order = sorted(lefts)

        def load(n: int) -> tuple[np.ndarray, np.ndarray]:
            return read_image(lefts[n]), read_image(rights[n])

    pairs = ordered_map(load, order)
    return FrameSequence.from_pairs(pairs, manifest.fps)


def downsample_sequence(seq: FrameSequence, factor: int) -> FrameSequence:
    """Keep every ``factor``-th frame; the frame rate drops by the same factor."""
    if isinstance(factor, bool) or not isinstance(factor, (int, np.integer)):
        raise ParameterError(f"downsample factor must be an integer, got {factor!r}")
    if factor < 1:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return seq
    fps = seq.fps / factor
    kept = seq.frames[::factor]
    frames = tuple(StereoFrame(f.left, f.right, i, i / fps) for i, f in enumerate(kept))
    return FrameSequence(frames, fps)


def write_frame_sequence(directory: str | Path, seq: FrameSequence, layout: str = "separate") -> SequenceManifest:
    """Write ``seq`` as PGM files plus ``manifest.txt``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(max(len(seq) - 1, 0))))
    if layout == "separate":
        manifest = SequenceManifest(
            fps=seq.fps,
            layout="separate",
            pattern_left=f"left_{{n:0{digits}d}}.pgm",
            pattern_right=f"right_{{n:0{digits}d}}.pgm",
        )
        for f in seq.frames:
            write_pgm(directory / manifest.pattern_left.format(n=f.index), f.left)  # type: ignore[union-attr]
            write_pgm(directory / manifest.pattern_right.format(n=f.index), f.right)  # type: ignore[union-attr]
    elif layout == "side_by_side":
        manifest = SequenceManifest(fps=seq.fps, layout="side_by_side", pattern=f"frame_{{n:0{digits}d}}.pgm")
        for f in seq.frames:
            write_pgm(directory / manifest.pattern.format(n=f.index), np.hstack([f.left, f.right]))  # type: ignore[union-attr]
    else:
        raise ConfigError(f"unknown layout {layout!r}")
    (directory / "manifest.txt").write_text(manifest.dumps())
    return manifest
