from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import map_coordinates

from breathscope.calib import (
    PinholeIntrinsics,
    StereoRig,
    compute_rectification,
    disparity_to_depth,
    is_identity_map,
    load_calibration,
    parse_calibration,
    rectify_image,
    rodrigues,
    rotation_vector,
)
from breathscope.errors import ConfigError, GeometryError, InvalidDisparityError, ParameterError, ValidationError

BASE = """\
fx_l = 700
fy_l = 700
cx_l = 320
cy_l = 240
fx_r = 700
fy_r = 700
cx_r = 320
cy_r = 240
rot = 1 0 0 0 1 0 0 0 1
trans = -60 0 0
"""


def test_identity_rotation_baseline(tmp_path):
    (tmp_path / "c.txt").write_text(BASE)
    rig = load_calibration(tmp_path / "c.txt")
    assert rig.baseline == 60.0
    assert rig.left.k1 == 0 and rig.right.k2 == 0


def test_missing_fx_names_key():
    text = BASE.replace("fx_l = 700\n", "")
    with pytest.raises(ConfigError, match="fx_l"):
        parse_calibration(text)


def test_reflection_rejected():
    with pytest.raises(ValidationError):
        parse_calibration(BASE.replace("rot = 1 0 0 0 1 0 0 0 1", "rot = 1 0 0 0 1 0 0 0 -1"))


def test_small_drift_reorthonormalised():
    rig = parse_calibration(BASE.replace("rot = 1 0 0", "rot = 1.0000002 0 0"))
    r = rig.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12


def test_large_drift_rejected():
    with pytest.raises(ValidationError):
        parse_calibration(BASE.replace("rot = 1 0 0", "rot = 1.001 0 0"))


def test_dumps_roundtrip(rng):
    rot = rodrigues(rng.normal(size=3) * 0.05)
    rig = StereoRig(PinholeIntrinsics(690, 700, 318, 242, 0.01, -0.002), PinholeIntrinsics(705, 702, 321, 238),
                    rot, np.array([-59.0, 0.4, 1.1]))
    back = parse_calibration(rig.dumps())
    np.testing.assert_allclose(back.rotation, rig.rotation, atol=1e-15)
    np.testing.assert_array_equal(back.translation, rig.translation)
    assert back.left == rig.left


def test_rodrigues_roundtrip(rng):
    for _ in range(20):
        v = rng.normal(size=3)
        v *= rng.uniform(0, 3.0) / np.linalg.norm(v)
        np.testing.assert_allclose(rotation_vector(rodrigues(v)), v, atol=1e-10)


def test_fronto_parallel_rig_gives_identity_maps():
    rig = StereoRig.rectified(700, 319.5, 239.5, 60)
    maps = compute_rectification(rig, (640, 480))
    assert is_identity_map(*maps.left) and is_identity_map(*maps.right)
    assert maps.f == 700 and maps.baseline == pytest.approx(60)


def test_degenerate_baseline():
    intr = PinholeIntrinsics(700, 700, 320, 240)
    rig = StereoRig(intr, intr, np.eye(3), np.array([-1e-12, 0, 0]))
    with pytest.raises(GeometryError):
        compute_rectification(rig, (64, 48))


def _invert_map(map_x, map_y, target):
    """Rectified coordinate whose inverse-map sample lands on ``target`` (brute force + Newton)."""
    d2 = (map_x - target[0]) ** 2 + (map_y - target[1]) ** 2
    v, u = np.unravel_index(np.argmin(d2), d2.shape)
    p = np.array([float(u), float(v)])

    def sample(q):
        coords = np.array([[q[1]], [q[0]]])
        return np.array([map_coordinates(map_x, coords, order=1)[0], map_coordinates(map_y, coords, order=1)[0]])

    for _ in range(20):
        r = sample(p) - target
        jac = np.column_stack([(sample(p + [1e-3, 0]) - sample(p)) / 1e-3, (sample(p + [0, 1e-3]) - sample(p)) / 1e-3])
        step = np.linalg.solve(jac, r)
        p = p - step
        if np.abs(step).max() < 1e-8:
            break
    return p


def _perturbed_rig(rng, max_deg):
    rv = rng.normal(size=3)
    rot = rodrigues(rv / np.linalg.norm(rv) * np.deg2rad(rng.uniform(0, max_deg)))
    t = np.array([-60.0, 0, 0]) + rng.normal(size=3) * [1.0, 2.0, 2.0]
    left = PinholeIntrinsics(500 + rng.uniform(-10, 10), 500 + rng.uniform(-10, 10), 160 + rng.uniform(-3, 3), 120)
    right = PinholeIntrinsics(500 + rng.uniform(-10, 10), 500 + rng.uniform(-10, 10), 160, 120 + rng.uniform(-3, 3))
    return StereoRig(left, right, rot, t)


def _random_points(rng, n):
    z = rng.uniform(600, 1500, n)
    return np.column_stack([rng.uniform(-0.15, 0.15, n) * z, rng.uniform(-0.12, 0.12, n) * z, z])


def test_two_degree_optical_axis_rotation_rows_align(rng):
    intr = PinholeIntrinsics(500, 500, 160, 120)
    rig = StereoRig(intr, intr, rodrigues(np.array([0, 0, np.deg2rad(2)])), np.array([-60.0, 0, 0]))
    maps = compute_rectification(rig, (320, 240))
    pts = _random_points(rng, 50)
    worst = 0.0
    for p in pts:
        pl = rig.left.project(p[None])[0]
        pr = rig.right.project((rig.rotation @ p + rig.translation)[None])[0]
        ql = _invert_map(*maps.left, pl)
        qr = _invert_map(*maps.right, pr)
        worst = max(worst, abs(ql[1] - qr[1]))
    assert worst < 0.5


def test_row_alignment_on_perturbed_rigs(rng):
    # direct projection through the rectified pair for many points
    worst = 0.0
    for _ in range(10):
        rig = _perturbed_rig(rng, 5.0)
        maps = compute_rectification(rig, (320, 240))
        pts = _random_points(rng, 100)
        ql = maps.project_left(pts)
        qr = maps.project_right(pts @ rig.rotation.T + rig.translation)
        worst = max(worst, np.abs(ql[:, 1] - qr[:, 1]).max())
        # the maps send these rectified pixels back onto the original projections
        inside = (ql[:, 0] > 1) & (ql[:, 0] < 318) & (ql[:, 1] > 1) & (ql[:, 1] < 238)
        coords = np.array([ql[inside, 1], ql[inside, 0]])
        back = np.column_stack([map_coordinates(m, coords, order=1) for m in maps.left])
        np.testing.assert_allclose(back, rig.left.project(pts[inside]), atol=0.05)
    assert worst < 0.5


def test_rectified_cameras_share_intrinsics_and_horizontal_baseline(rng):
    rig = _perturbed_rig(rng, 4.0)
    maps = compute_rectification(rig, (320, 240))
    # baseline expressed in the rectified left frame points along -x only
    t_rect = maps.right_rotation @ rig.translation
    np.testing.assert_allclose(t_rect[1:], 0, atol=1e-9)
    assert t_rect[0] < 0 and maps.baseline == pytest.approx(rig.baseline)


def test_principal_ray_maps_to_rectified_centre(rng):
    rig = _perturbed_rig(rng, 3.0)
    maps = compute_rectification(rig, (320, 240))
    axis = maps.left_rotation.T @ np.array([0, 0, 1.0])
    for depth in (500, 1000, 1800):
        q = maps.project_left((axis * depth)[None])[0]
        np.testing.assert_allclose(q, [maps.cx, maps.cy], atol=1e-9)


def test_distortion_in_inverse_map():
    intr = PinholeIntrinsics(400, 400, 80, 60, k1=-0.1, k2=0.01)
    rig = StereoRig(intr, intr, np.eye(3), np.array([-50.0, 0, 0]))
    maps = compute_rectification(rig, (160, 120))
    pts = _random_points(np.random.default_rng(3), 40)
    q = maps.project_left(pts)
    inside = (q[:, 0] > 1) & (q[:, 0] < 158) & (q[:, 1] > 1) & (q[:, 1] < 118)
    coords = np.array([q[inside, 1], q[inside, 0]])
    back = np.column_stack([map_coordinates(m, coords, order=1) for m in maps.left])
    np.testing.assert_allclose(back, intr.project(pts[inside]), atol=0.05)


def test_rectify_identity_map(rng):
    img = rng.integers(0, 256, (6, 9)).astype(np.uint8)
    u, v = np.meshgrid(np.arange(9.0), np.arange(6.0))
    np.testing.assert_array_equal(rectify_image(img, (u, v)), img)
    # idempotent under a second identity pass
    np.testing.assert_array_equal(rectify_image(rectify_image(img, (u, v)), (u, v)), img)


def test_rectify_integer_shift(rng):
    img = rng.integers(1, 256, (5, 10)).astype(np.uint8)
    u, v = np.meshgrid(np.arange(10.0), np.arange(5.0))
    out = rectify_image(img, (u - 3, v))
    assert np.all(out[:, :3] == 0)
    np.testing.assert_array_equal(out[:, 3:], img[:, :7])


def test_rectify_half_pixel():
    img = np.array([[0, 100]], np.uint8)
    out = rectify_image(img, (np.array([[0.5, 1.5]]), np.array([[0.0, 0.0]])))
    assert out[0, 0] == 50 and out[0, 1] == 0


def test_rectify_size_mismatch():
    with pytest.raises(ParameterError):
        rectify_image(np.zeros((4, 4), np.uint8), (np.zeros((3, 4)), np.zeros((3, 4))))


def test_depth_examples():
    assert disparity_to_depth(1, 1, 1) == 1
    assert disparity_to_depth(42, 700, 60) == pytest.approx(1000)
    with pytest.raises(InvalidDisparityError):
        disparity_to_depth(0, 700, 60)
    with pytest.raises(InvalidDisparityError):
        disparity_to_depth(np.array([3.0, -1.0]), 700, 60)


@settings(max_examples=100, deadline=None)
@given(d=st.floats(0.01, 500), f=st.floats(10, 3000), b=st.floats(1, 500))
def test_depth_halving_and_monotone(d, f, b):
    z = disparity_to_depth(d, f, b)
    assert disparity_to_depth(d / 2, f, b) == pytest.approx(2 * z, rel=1e-12)
    assert disparity_to_depth(d * 1.01, f, b) < z


@settings(max_examples=100, deadline=None)
@given(z=st.floats(300, 5000), f=st.floats(100, 2000), b=st.floats(10, 300))
def test_depth_roundtrip(z, f, b):
    assert disparity_to_depth(f * b / z, f, b) == pytest.approx(z, rel=1e-9)


def test_rig_validation():
    intr = PinholeIntrinsics(10, 10, 0, 0)
    with pytest.raises(ValidationError):
        StereoRig(intr, intr, np.diag([1.0, 1.0, -1.0]), np.array([1.0, 0, 0]))
    with pytest.raises(ValidationError):
        StereoRig(intr, intr, np.eye(3), np.zeros(3))
    with pytest.raises(ValidationError):
        PinholeIntrinsics(0, 10, 0, 0)
