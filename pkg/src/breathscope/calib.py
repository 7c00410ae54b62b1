"""Stereo camera model, rectification and disparity-to-depth conversion.

Camera frames follow the usual computer-vision convention: ``z`` forward,
``x`` right, ``y`` down, lengths in millimetres.  The rig pose maps a point
from left-camera to right-camera coordinates, ``X_r = R @ X_l + T``; a
standard side-by-side rig with a 60 mm baseline has ``T = (-60, 0, 0)``.

Calibration files are plain ``key = value`` text::

    fx_l = 700    fy_l = 700    cx_l = 320    cy_l = 240
    k1_l = 0      k2_l = 0                       # optional, default 0
    fx_r = ...                                   # same keys with _r
    rot = 1 0 0  0 1 0  0 0 1                    # row-major 3x3
    trans = -60 0 0                              # millimetres

(one key per line).  Estimating these parameters from checkerboard views is
left to an external calibration tool.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, GeometryError, InvalidDisparityError, ParameterError, ValidationError
from .frameio import as_gray_image, parse_key_values

ORTHO_TOL = 1e-9
REORTHONORMALIZE_TOL = 1e-6


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points ``(N, 3)`` to pixels ``(N, 2)``, with distortion."""
        pts = np.asarray(points, dtype=float)
        x = pts[:, 0] / pts[:, 2]
        y = pts[:, 1] / pts[:, 2]
        factor = self._radial(x, y)
        return np.column_stack([self.fx * x * factor + self.cx, self.fy * y * factor + self.cy])

    def _radial(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        r2 = x * x + y * y
        return 1.0 + self.k1 * r2 + self.k2 * r2 * r2


def _check_rotation(rot: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if np.abs(rot.T @ rot - np.eye(3)).max() > tol:
        raise ValidationError("rotation is not orthonormal")
    if np.linalg.det(rot) <= 0:
        raise ValidationError("rotation has det -1 (reflection)")


@dataclass(frozen=True)
class StereoRig:
    left: PinholeIntrinsics
    right: PinholeIntrinsics
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        _check_rotation(rot)
        if not np.linalg.norm(trans) > 0:
            raise ValidationError("baseline must be positive")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.translation))

    @classmethod
    def rectified(cls, f: float, cx: float, cy: float, baseline: float) -> "StereoRig":
        """An ideal fronto-parallel rig with identical cameras."""
        intr = PinholeIntrinsics(f, f, cx, cy)
        return cls(intr, intr, np.eye(3), np.array([-baseline, 0.0, 0.0]))

    def dumps(self) -> str:
        lines = []
        for side, intr in (("l", self.left), ("r", self.right)):
            for key in ("fx", "fy", "cx", "cy", "k1", "k2"):
                lines.append(f"{key}_{side} = {getattr(intr, key)!r}")
        lines.append("rot = " + " ".join(repr(float(v)) for v in self.rotation.ravel()))
        lines.append("trans = " + " ".join(repr(float(v)) for v in self.translation))
        return "\n".join(lines) + "\n"


def _floats(values: dict[str, str], key: str, count: int) -> list[float]:
    if key not in values:
        raise ConfigError(f"calibration is missing key '{key}'")
    try:
        out = [float(tok) for tok in values[key].replace(",", " ").split()]
    except ValueError as exc:
        raise FormatError(f"calibration key '{key}' is not numeric: {values[key]!r}") from exc
    if len(out) != count:
        raise FormatError(f"calibration key '{key}' needs {count} values, got {len(out)}")
    return out


def parse_calibration(text: str) -> StereoRig:
    values = parse_key_values(text)
    intrinsics = []
    for side in ("l", "r"):
        params = {k: _floats(values, f"{k}_{side}", 1)[0] for k in ("fx", "fy", "cx", "cy")}
        for k in ("k1", "k2"):
            params[k] = _floats(values, f"{k}_{side}", 1)[0] if f"{k}_{side}" in values else 0.0
        intrinsics.append(PinholeIntrinsics(**params))
    rot = np.array(_floats(values, "rot", 9)).reshape(3, 3)
    trans = np.array(_floats(values, "trans", 3))

    drift = np.abs(rot.T @ rot - np.eye(3)).max()
    if drift > REORTHONORMALIZE_TOL:
        raise ValidationError(f"rotation is not orthonormal (max |R^T R - I| = {drift:.3g})")
    if np.linalg.det(rot) <= 0:
        raise ValidationError("rotation has det -1 (reflection)")
    if drift > 0:
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
    return StereoRig(intrinsics[0], intrinsics[1], rot, trans)


def load_calibration(path: str | Path) -> StereoRig:
    """Read and validate a calibration file."""
    return parse_calibration(Path(path).read_text())


# --------------------------------------------------------------------------
# rectification


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rotvec)
    if theta < 1e-15:
        return np.eye(3)
    k = rotvec / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx


def rotation_vector(rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rodrigues` (axis times angle)."""
    cos = np.clip((np.trace(rot) - 1) / 2, -1.0, 1.0)
    theta = np.arccos(cos)
    if theta < 1e-12:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        m = (rot + np.eye(3)) / 2
        axis = m[np.argmax(np.diag(m))]
        axis = axis / np.linalg.norm(axis)
        return axis * theta
    axis = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return axis / (2 * np.sin(theta)) * theta


@dataclass(frozen=True)
class RectificationMaps:
    """Inverse sample maps: rectified pixel ``(v, u)`` reads source ``(map_y, map_x)``."""

    left_x: np.ndarray
    left_y: np.ndarray
    right_x: np.ndarray
    right_y: np.ndarray
    f: float
    cx: float
    cy: float
    baseline: float
    left_rotation: np.ndarray
    right_rotation: np.ndarray

    @property
    def left(self) -> tuple[np.ndarray, np.ndarray]:
        return self.left_x, self.left_y

    @property
    def right(self) -> tuple[np.ndarray, np.ndarray]:
        return self.right_x, self.right_y

    @property
    def image_size(self) -> tuple[int, int]:
        h, w = self.left_x.shape
        return w, h

    def project_left(self, points: np.ndarray) -> np.ndarray:
        """Rectified-left pixel coordinates of left-camera points ``(N, 3)``."""
        p = np.asarray(points, dtype=float) @ self.left_rotation.T
        return np.column_stack([self.f * p[:, 0] / p[:, 2] + self.cx, self.f * p[:, 1] / p[:, 2] + self.cy])

    def project_right(self, points: np.ndarray) -> np.ndarray:
        """Rectified-right pixel coordinates of right-camera points ``(N, 3)``."""
        p = np.asarray(points, dtype=float) @ self.right_rotation.T
        return np.column_stack([self.f * p[:, 0] / p[:, 2] + self.cx, self.f * p[:, 1] / p[:, 2] + self.cy])


def _align_to_neg_x(t: np.ndarray) -> np.ndarray:
    """Smallest rotation taking direction ``t`` onto ``-x``."""
    t = t / np.linalg.norm(t)
    target = np.array([-1.0, 0.0, 0.0])
    axis = np.cross(t, target)
    s = np.linalg.norm(axis)
    c = float(np.dot(t, target))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # baseline points the wrong way: turn about the optical axis
        return rodrigues(np.array([0.0, 0.0, np.pi]))
    return rodrigues(axis / s * np.arctan2(s, c))


def _inverse_map(intr: PinholeIntrinsics, rot: np.ndarray, f: float, c: tuple[float, float], size: tuple[int, int]):
    w, h = size
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rays = np.stack([(u - c[0]) / f, (v - c[1]) / f, np.ones_like(u)], axis=-1)
    src = rays @ rot  # rot.T applied to each ray
    x = src[..., 0] / src[..., 2]
    y = src[..., 1] / src[..., 2]
    factor = intr._radial(x, y)
    return intr.fx * x * factor + intr.cx, intr.fy * y * factor + intr.cy


def compute_rectification(rig: StereoRig, image_size: tuple[int, int]) -> RectificationMaps:
    """Build row-aligned rectification maps for ``rig`` at ``(width, height)``.

    The relative rotation is split evenly between the cameras, then both are
    turned so the baseline lies along ``x``.  Both rectified cameras share a
    focal length (mean of the originals) and principal point.
    """
    if rig.baseline < 1e-9:
        raise GeometryError("baseline is zero; cannot rectify")
    w, h = image_size
    if w < 1 or h < 1:
        raise ParameterError(f"bad image size {image_size}")

    half = rodrigues(rotation_vector(rig.rotation) / 2)
    t_mid = half.T @ rig.translation
    align = _align_to_neg_x(t_mid)
    r_left = align @ half
    r_right = align @ half.T

    f = float(np.mean([(rig.left.fx + rig.left.fy) / 2, (rig.right.fx + rig.right.fy) / 2]))
    # place each original principal point near where it was
    shifts = []
    for intr, rot in ((rig.left, r_left), (rig.right, r_right)):
        axis = rot[:, 2]
        shifts.append((intr.cx - f * axis[0] / axis[2], intr.cy - f * axis[1] / axis[2]))
    cx, cy = (float(v) for v in np.mean(shifts, axis=0))

    lx, ly = _inverse_map(rig.left, r_left, f, (cx, cy), (w, h))
    rx, ry = _inverse_map(rig.right, r_right, f, (cx, cy), (w, h))
    baseline = float(np.linalg.norm(align @ t_mid))
    return RectificationMaps(lx, ly, rx, ry, f, cx, cy, baseline, r_left, r_right)


def is_identity_map(map_x: np.ndarray, map_y: np.ndarray, tol: float = 1e-9) -> bool:
    h, w = map_x.shape
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    return bool(np.abs(map_x - u).max() <= tol and np.abs(map_y - v).max() <= tol)


def bilinear_sample(image: np.ndarray, map_x: np.ndarray, map_y: np.ndarray) -> np.ndarray:
    """Float bilinear lookup; samples outside the image are 0."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    eps = 1e-9
    inside = (map_x >= -eps) & (map_x <= w - 1 + eps) & (map_y >= -eps) & (map_y <= h - 1 + eps)
    x = np.clip(map_x, 0, w - 1)
    y = np.clip(map_y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    top = img[y0, x0] * (1 - ax) + img[y0, x1] * ax
    bottom = img[y1, x0] * (1 - ax) + img[y1, x1] * ax
    out = top * (1 - ay) + bottom * ay
    return np.where(inside, out, 0.0)


def rectify_image(image: np.ndarray, rect_map: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Resample ``image`` through one camera's inverse map (bilinear, zero fill)."""
    img = as_gray_image(image)
    map_x, map_y = rect_map
    if map_x.shape != img.shape or map_y.shape != img.shape:
        raise ParameterError(f"map size {map_x.shape} does not match image {img.shape}")
    return np.clip(np.rint(bilinear_sample(img, map_x, map_y)), 0, 255).astype(np.uint8)


def disparity_to_depth(d, rectified_f: float, baseline: float):
    """Depth in mm from disparity in pixels: ``Z = f * B / d``.

    Works on scalars or arrays; any non-positive disparity raises
    :class:`InvalidDisparityError`.
    """
    arr = np.asarray(d, dtype=float)
    if np.any(~(arr > 0)):
        raise InvalidDisparityError("disparity must be positive")
    z = rectified_f * baseline / arr
    return float(z) if z.ndim == 0 else z
