from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from breathscope.calib import StereoRig, compute_rectification
from breathscope.cloud import (
    NeighborIndex,
    PointCloud,
    RoiBox,
    crop_roi,
    denoise_statistical,
    remove_invalid,
    reproject,
)
from breathscope.errors import FormatError, ParameterError
from breathscope.stereo import DisparityMap


def _maps(f=700.0, b=60.0, cx=320.0, cy=240.0, size=(640, 480)):
    return compute_rectification(StereoRig.rectified(f, cx, cy, b), size)


def _dmap(values):
    return DisparityMap(np.asarray(values, float), 0.0, 1000.0)


def test_principal_ray_point():
    maps = _maps()
    v = np.full((480, 640), np.nan)
    v[240, 320] = 700 * 60 / 1000
    cloud = reproject(_dmap(v), maps)
    np.testing.assert_allclose(cloud.points, [[0, 0, 1000]], atol=1e-9)
    assert cloud.source_pixel.tolist() == [[320, 240]]


def test_reprojection_formula_example():
    maps = _maps()
    v = np.full((480, 640), np.nan)
    v[240, 390] = 42
    np.testing.assert_allclose(reproject(_dmap(v), maps).points, [[100, 0, 1000]], atol=1e-9)


def test_all_invalid_gives_empty_cloud():
    assert len(reproject(_dmap(np.full((10, 12), np.nan)), _maps(size=(12, 10)))) == 0


def test_plane_roundtrip():
    maps = _maps(f=480, b=100, cx=159.5, cy=119.5, size=(320, 240))
    z = 987.0
    cloud = reproject(_dmap(np.full((240, 320), 480 * 100 / z)), maps)
    assert len(cloud) == 320 * 240
    np.testing.assert_allclose(cloud.points[:, 2], z, rtol=1e-6)


def test_stride_keeps_grid():
    maps = _maps(size=(8, 6))
    cloud = reproject(_dmap(np.full((6, 8), 10.0)), maps, stride=2)
    assert len(cloud) == 12
    assert np.all(cloud.source_pixel % 2 == 0)


def test_remove_invalid():
    pts = np.array([[0, 0, 500.0], [1, 1, 1500], [0, 0, 5000], [np.nan, 0, 800], [0, 0, -400]])
    out = remove_invalid(PointCloud(pts))
    np.testing.assert_array_equal(out.points, pts[:2])
    inside = PointCloud(pts[:2])
    np.testing.assert_array_equal(remove_invalid(inside).points, inside.points)


def brute_mean_distance(pts, k):
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d.sort(axis=1)
    return d[:, 1 : k + 1].mean(axis=1)


def test_outlier_removed_cluster_intact(rng):
    cluster = rng.uniform(0, 10, (100, 3)) + [0, 0, 1000]
    pts = np.vstack([cluster, [[500, 0, 1000]]])
    md = brute_mean_distance(pts, 8)
    expect = md <= md.mean() + 1.0 * md.std()
    out = denoise_statistical(PointCloud(pts), k=8, stddev_mult=1.0)
    np.testing.assert_array_equal(out.points, pts[expect])
    assert not np.any(np.all(out.points == [500, 0, 1000], axis=1))
    assert expect[:100].all()


def test_regular_grid_untouched():
    # with k = 1 every grid point sees the same spacing, so sigma = 0
    g = np.stack(np.meshgrid(np.arange(10.0), np.arange(10.0), [0.0, 1.0]), -1).reshape(-1, 3) * 5 + [0, 0, 900]
    assert len(denoise_statistical(PointCloud(g), k=1, stddev_mult=1.0)) == len(g)
    # equally spaced points on a ring share their whole neighbourhood profile
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    ring = np.column_stack([100 * np.cos(ang), 100 * np.sin(ang), np.full(64, 900.0)])
    assert len(denoise_statistical(PointCloud(ring), k=4, stddev_mult=1.0)) == 64


def test_small_cloud_warns():
    cloud = PointCloud(np.zeros((5, 3)) + [0, 0, 1])
    with pytest.warns(RuntimeWarning):
        out = denoise_statistical(cloud, k=8)
    assert out is cloud


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 10), mult=st.floats(0.0, 3.0))
def test_denoise_output_is_subset(seed, k, mult):
    pts = np.random.default_rng(seed).normal(size=(60, 3)) * 10 + [0, 0, 800]
    out = denoise_statistical(PointCloud(pts), k=k, stddev_mult=mult)
    rows = {tuple(p) for p in pts}
    assert all(tuple(p) in rows for p in out.points)
    md = brute_mean_distance(pts, k)
    expect = md <= md.mean() + mult * md.std() + 1e-9 * md.mean()
    assert len(out) == expect.sum()


def test_roi_full_and_empty(rng):
    cloud = PointCloud(rng.uniform(-100, 100, (50, 3)) + [0, 0, 1000])
    assert crop_roi(cloud, RoiBox.parse("full")) is cloud
    assert len(crop_roi(cloud, RoiBox((500, 500, 0), (600, 600, 10)))) == 0


def test_roi_keeps_inside(rng):
    pts = rng.uniform(-100, 100, (200, 3)) + [0, 0, 1000]
    roi = RoiBox.parse("-50:-20:950:50:20:1050")
    out = crop_roi(PointCloud(pts), roi)
    inside = (np.abs(pts[:, 0]) <= 50) & (np.abs(pts[:, 1]) <= 20) & (np.abs(pts[:, 2] - 1000) <= 50)
    np.testing.assert_array_equal(out.points, pts[inside])
    assert str(roi) == "-50:-20:950:50:20:1050"


def test_roi_parse_errors():
    with pytest.raises(FormatError):
        RoiBox.parse("1:2:3")
    with pytest.raises(ParameterError):
        RoiBox.parse("0:0:0:0:1:1")


def test_neighbor_index_matches_linear_scan(rng):
    for _ in range(100):
        n = int(rng.integers(1, 2001))
        pts = rng.normal(size=(n, 3)) * rng.uniform(1, 100)
        q = rng.normal(size=(20, 3)) * 50
        dist, idx = NeighborIndex(pts).nearest(q)
        full = np.linalg.norm(q[:, None] - pts[None], axis=-1)
        np.testing.assert_allclose(dist, full.min(axis=1), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(full[np.arange(len(q)), idx], full.min(axis=1), rtol=1e-12, atol=1e-12)
