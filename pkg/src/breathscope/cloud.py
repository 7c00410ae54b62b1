"""Point clouds from disparity, plus cleanup and region-of-interest cropping.

Coordinates are millimetres in the left rectified camera frame
(``z`` forward, ``x`` right, ``y`` down).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .calib import RectificationMaps
from .errors import FormatError, ParameterError
from .stereo import DisparityMap

DEFAULT_Z_RANGE = (300.0, 2000.0)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    source_pixel: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.source_pixel is not None:
            px = np.asarray(self.source_pixel).reshape(-1, 2)
            if len(px) != len(pts):
                raise ParameterError("source_pixel length differs from points")
            object.__setattr__(self, "source_pixel", px)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask_or_index: np.ndarray) -> "PointCloud":
        px = None if self.source_pixel is None else self.source_pixel[mask_or_index]
        return PointCloud(self.points[mask_or_index], px)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        return PointCloud(self.points @ np.asarray(rotation).T + translation, self.source_pixel)


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned box in camera coordinates; ``RoiBox()`` means the full field."""

    lo: tuple[float, float, float] | None = None
    hi: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if (self.lo is None) != (self.hi is None):
            raise ParameterError("RoiBox needs both corners or neither")
        if self.lo is not None:
            lo = tuple(float(v) for v in self.lo)
            hi = tuple(float(v) for v in self.hi)  # type: ignore[union-attr]
            if len(lo) != 3 or len(hi) != 3 or not all(a < b for a, b in zip(lo, hi)):
                raise ParameterError(f"RoiBox corners must satisfy lo < hi componentwise: {lo}, {hi}")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    @property
    def is_full(self) -> bool:
        return self.lo is None

    @classmethod
    def parse(cls, text: str) -> "RoiBox":
        """Parse ``full`` or ``x0:y0:z0:x1:y1:z1``."""
        text = text.strip()
        if text.lower() == "full":
            return cls()
        try:
            vals = [float(v) for v in text.split(":")]
        except ValueError as exc:
            raise FormatError(f"bad ROI {text!r}") from exc
        if len(vals) != 6:
            raise FormatError(f"ROI needs 6 values x0:y0:z0:x1:y1:z1, got {text!r}")
        return cls(tuple(vals[:3]), tuple(vals[3:]))  # type: ignore[arg-type]

    def __str__(self) -> str:
        if self.is_full:
            return "full"
        return ":".join(f"{v:g}" for v in (*self.lo, *self.hi))  # type: ignore[misc]

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if self.is_full:
            return np.ones(len(pts), dtype=bool)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


class NeighborIndex:
    """Exact nearest-neighbour queries over a fixed cloud (k-d tree)."""

    def __init__(self, points: np.ndarray) -> None:
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, queries: np.ndarray, k: int = 1, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the ``k`` nearest indexed points to each query."""
        return self._tree.query(np.asarray(queries, dtype=float).reshape(-1, 3), k=k, workers=workers)


def reproject(dmap: DisparityMap, rect: RectificationMaps, stride: int = 1) -> PointCloud:
    """Triangulate every valid disparity pixel.

    ``stride > 1`` keeps only pixels on every ``stride``-th row and column.
    """
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    usable = dmap.valid & (np.nan_to_num(dmap.values) > 0)
    if stride > 1:
        grid = np.zeros_like(usable)
        grid[::stride, ::stride] = True
        usable &= grid
    v, u = np.nonzero(usable)
    d = dmap.values[v, u]
    z = rect.f * rect.baseline / d
    x = (u - rect.cx) * z / rect.f
    y = (v - rect.cy) * z / rect.f
    return PointCloud(np.column_stack([x, y, z]), np.column_stack([u, v]))


def remove_invalid(cloud: PointCloud, z_range: tuple[float, float] = DEFAULT_Z_RANGE) -> PointCloud:
    """Drop non-finite points and points outside the working depth range."""
    pts = cloud.points
    keep = np.all(np.isfinite(pts), axis=1)
    with np.errstate(invalid="ignore"):
        keep &= (pts[:, 2] >= z_range[0]) & (pts[:, 2] <= z_range[1]) & (pts[:, 2] > 0)
    return cloud.subset(keep)


def mean_neighbor_distance(points: np.ndarray, k: int, workers: int = 1) -> np.ndarray:
    dist, _ = NeighborIndex(points).nearest(points, k=k + 1, workers=workers)
    # column 0 is the point itself
    return dist[:, 1:].mean(axis=1)


def denoise_statistical(cloud: PointCloud, k: int = 16, stddev_mult: float = 1.5) -> PointCloud:
    """Statistical outlier removal.

    Points whose mean distance to their ``k`` nearest neighbours exceeds the
    cloud-wide mean of that quantity by more than ``stddev_mult`` standard
    deviations are removed.  Clouds with ``k`` or fewer points are returned
    unchanged with a :class:`RuntimeWarning`.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    if len(cloud) <= k:
        warnings.warn(f"cloud has {len(cloud)} points, need more than k={k}; not denoised", RuntimeWarning)
        return cloud
    md = mean_neighbor_distance(cloud.points, k)
    mu, sigma = md.mean(), md.std()
    # relative slack keeps rounding noise on equal distances from removing points
    return cloud.subset(md <= mu + stddev_mult * sigma + 1e-9 * mu)


def crop_roi(cloud: PointCloud, roi: RoiBox) -> PointCloud:
    if roi.is_full:
        return cloud
    return cloud.subset(roi.contains(cloud.points))
