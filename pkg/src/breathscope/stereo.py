"""Block-matching disparity on rectified pairs, plus post-filtering.

Disparity convention: a left pixel at column ``x`` matches the right pixel at
column ``x - d``.  Invalid pixels hold ``NaN``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ParameterError
from .frameio import as_gray_image, write_pgm

_BIG = np.int32(2**30)


@dataclass(frozen=True)
class MatchParams:
    min_disparity: int = 0
    max_disparity: int = 64
    block_radius: int = 5
    uniqueness_ratio: float = 1.05
    lr_consistency_tol: float = 1.0
    texture_threshold: float = 10.0

    def __post_init__(self) -> None:
        if not 0 <= self.min_disparity < self.max_disparity:
            raise ParameterError(
                f"disparity range must satisfy 0 <= min < max, got [{self.min_disparity}, {self.max_disparity}]"
            )
        if self.block_radius < 1:
            raise ParameterError("block_radius must be >= 1")
        if self.uniqueness_ratio < 1:
            raise ParameterError("uniqueness_ratio must be >= 1")

    @property
    def disparities(self) -> np.ndarray:
        return np.arange(self.min_disparity, self.max_disparity + 1)


@dataclass(frozen=True)
class DisparityMap:
    values: np.ndarray
    min_disparity: float
    max_disparity: float

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if self.values.size else 0.0

    def replace(self, values: np.ndarray) -> "DisparityMap":
        return DisparityMap(values, self.min_disparity, self.max_disparity)


def _box_sum(arr: np.ndarray, r: int, dtype=np.int32) -> np.ndarray:
    """Exact sum over ``(2r+1)^2`` windows along the last two axes.

    Output has the input's shape; entries whose window leaves the array are
    meaningless and must be masked by the caller.
    """
    h, w = arr.shape[-2:]
    k = 2 * r + 1
    out = np.zeros(arr.shape, dtype=dtype)
    if h < k or w < k:
        return out
    acc = np.cumsum(arr, axis=-2, dtype=dtype)
    rows = acc[..., k - 1 :, :].copy()
    rows[..., 1:, :] -= acc[..., : h - k, :]
    acc = np.cumsum(rows, axis=-1, dtype=dtype)
    out[..., r : h - r, r : w - r] = acc[..., k - 1 :]
    out[..., r : h - r, r + 1 : w - r] -= acc[..., : w - k]
    return out


def sad_cost_volume(left: np.ndarray, right: np.ndarray, params: MatchParams) -> np.ndarray:
    """SAD costs, shape ``(n_disparities, H, W)``; impossible windows hold a huge sentinel."""
    lft = as_gray_image(left).astype(np.int32)
    rgt = as_gray_image(right).astype(np.int32)
    if lft.shape != rgt.shape:
        raise ParameterError(f"image size mismatch: {lft.shape} vs {rgt.shape}")
    h, w = lft.shape
    r = params.block_radius
    disps = params.disparities
    diff = np.zeros((len(disps), h, w), dtype=np.int32)
    for i, d in enumerate(disps):
        if d < w:
            np.abs(lft[:, d:] - rgt[:, : w - d], out=diff[i, :, d:])
    cost = _box_sum(diff, r)

    valid = np.zeros((len(disps), h, w), dtype=bool)
    cols = np.arange(w)
    rows_ok = (np.arange(h) >= r) & (np.arange(h) < h - r)
    for i, d in enumerate(disps):
        cols_ok = (cols - d - r >= 0) & (cols + r < w)
        valid[i] = rows_ok[:, None] & cols_ok[None, :]
    cost[~valid] = _BIG
    return cost


def integer_disparity(cost: np.ndarray, params: MatchParams) -> np.ndarray:
    """Winner-take-all integer disparity (smallest ``d`` on ties); -1 where no candidate."""
    best = np.argmin(cost, axis=0)
    out = best + params.min_disparity
    has = np.take_along_axis(cost, best[None], axis=0)[0] < _BIG
    return np.where(has, out, -1)


def _right_view_disparity(cost: np.ndarray, params: MatchParams) -> np.ndarray:
    """Winner-take-all disparity for each right-image pixel from the same volume."""
    n, h, w = cost.shape
    right_cost = np.full_like(cost, _BIG)
    for i, d in enumerate(params.disparities):
        if d < w:
            right_cost[i, :, : w - d] = cost[i, :, d:]
    return integer_disparity(right_cost, params)


def compute_disparity(left: np.ndarray, right: np.ndarray, params: MatchParams | None = None) -> DisparityMap:
    """Dense SAD block matching with subpixel refinement and validity gates.

    A pixel is invalid when its window leaves the image, the window texture
    variance is below ``texture_threshold``, the best cost fails the
    uniqueness test against the best cost more than one pixel away, or the
    left-right check disagrees by more than ``lr_consistency_tol``.
    """
    params = params or MatchParams()
    cost = sad_cost_volume(left, right, params)
    n, h, w = cost.shape
    r = params.block_radius
    d_int = integer_disparity(cost, params)
    valid = d_int >= 0
    best_idx = np.clip(d_int - params.min_disparity, 0, n - 1)[None]
    d_right = _right_view_disparity(cost, params)

    c0 = np.take_along_axis(cost, best_idx, axis=0)[0].astype(float)
    lo_idx = np.maximum(best_idx - 1, 0)
    hi_idx = np.minimum(best_idx + 1, n - 1)
    lo = np.take_along_axis(cost, lo_idx, axis=0)[0]
    hi = np.take_along_axis(cost, hi_idx, axis=0)[0]
    interior = (best_idx[0] > 0) & (best_idx[0] < n - 1) & (lo < _BIG) & (hi < _BIG)

    # uniqueness: best cost against the best one more than a pixel away;
    # an exact tie is ambiguous and also fails
    for idx in (lo_idx, best_idx, hi_idx):
        np.put_along_axis(cost, idx, _BIG, axis=0)
    second = cost.min(axis=0)
    valid &= ~((second < _BIG) & (c0 * params.uniqueness_ratio >= second))

    # texture gate on the left window
    lft = as_gray_image(left).astype(np.int64)
    k2 = (2 * r + 1) ** 2
    s1 = _box_sum(lft, r, np.int64)
    s2 = _box_sum(lft * lft, r, np.int64)
    variance = (s2 - s1 * s1 / k2) / k2
    valid &= variance >= params.texture_threshold

    # left-right consistency
    ys, xs = np.nonzero(valid)
    xr = xs - d_int[ys, xs]
    inside = (xr >= 0) & (xr < w)
    dr = np.full(xs.shape, -1)
    dr[inside] = d_right[ys[inside], xr[inside]]
    bad = (dr < 0) | (np.abs(dr - d_int[ys, xs]) > params.lr_consistency_tol)
    valid[ys[bad], xs[bad]] = False

    # parabola through (d*-1, d*, d*+1)
    lo_f, hi_f = lo.astype(float), hi.astype(float)
    denom = lo_f - 2 * c0 + hi_f
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(interior & (denom > 0), (lo_f - hi_f) / (2 * denom), 0.0)
    offset = np.clip(offset, -0.5, 0.5)
    values = np.clip(d_int + offset, params.min_disparity, params.max_disparity)
    values = np.where(valid, values, np.nan)
    return DisparityMap(values, float(params.min_disparity), float(params.max_disparity))


def _valid_median(values: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Median of valid window entries, their count, and the in-image window size."""
    padded = np.pad(values, radius, constant_values=np.nan)
    win = sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1)).reshape(values.shape + (-1,))
    count = np.isfinite(win).sum(axis=-1)
    ordered = np.sort(win, axis=-1)  # NaN sorts last
    hi_idx = np.clip(count // 2, 0, win.shape[-1] - 1)
    lo_idx = np.clip((count - 1) // 2, 0, win.shape[-1] - 1)
    med = 0.5 * (
        np.take_along_axis(ordered, hi_idx[..., None], axis=-1)[..., 0]
        + np.take_along_axis(ordered, lo_idx[..., None], axis=-1)[..., 0]
    )
    inside = sliding_window_view(np.pad(np.ones(values.shape, dtype=np.int32), radius), (2 * radius + 1,) * 2)
    return med, count, inside.sum(axis=(-2, -1))


def speckle_labels(values: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Label 4-connected regions whose neighbouring disparities differ by <= ``tol``.

    Returns ``(labels, sizes)``; invalid pixels get label -1.
    """
    h, w = values.shape
    valid = np.isfinite(values)
    ids = np.arange(h * w).reshape(h, w)
    rows, cols = [], []
    for a, b, va, vb in (
        (ids[:, :-1], ids[:, 1:], values[:, :-1], values[:, 1:]),
        (ids[:-1, :], ids[1:, :], values[:-1, :], values[1:, :]),
    ):
        with np.errstate(invalid="ignore"):
            link = np.isfinite(va) & np.isfinite(vb) & (np.abs(va - vb) <= tol)
        rows.append(a[link])
        cols.append(b[link])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(h * w, h * w))
    _, labels = connected_components(graph, directed=False)
    labels = labels.reshape(h, w)
    sizes = np.bincount(labels[valid], minlength=labels.max() + 1)
    return np.where(valid, labels, -1), sizes


def filter_disparity(
    dmap: DisparityMap,
    median_radius: int = 1,
    speckle_max_area: int = 100,
    speckle_tol: float = 1.0,
) -> DisparityMap:
    """Median-filter over valid neighbours, then drop small speckle regions.

    A valid pixel survives the median step only when at least half of the
    in-image part of its window is valid.  Invalid pixels are never revived.
    """
    values = dmap.values.astype(float)
    valid = np.isfinite(values)
    if not valid.any():
        return dmap.replace(values)
    if median_radius > 0:
        med, count, window = _valid_median(values, median_radius)
        values = np.where(valid & (2 * count >= window), med, np.nan)
    if speckle_max_area > 0:
        labels, sizes = speckle_labels(values, speckle_tol)
        small = (labels >= 0) & (sizes[np.maximum(labels, 0)] < speckle_max_area)
        values = np.where(small, np.nan, values)
    return dmap.replace(values)


def write_disparity_pgm(path: str | Path, dmap: DisparityMap) -> None:
    """Debug dump: 16-bit PGM holding ``round(d * 256)``, invalid pixels 0."""
    scaled = np.where(dmap.valid, np.rint(np.nan_to_num(dmap.values) * 256), 0)
    write_pgm(path, np.clip(scaled, 0, 65535).astype(np.uint16))
