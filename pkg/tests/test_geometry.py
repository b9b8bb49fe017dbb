"""Projection math: pinhole arithmetic, round trips, z-buffer oracle."""

import numpy as np
import pytest

from ptclab import geometry as G
from ptclab.errors import ConfigurationError, UsageError

K = G.CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def test_on_axis_point():
    s = G.project_point(K, G.Point3(0.0, 0.0, 10.0))
    assert (s.row, s.col, s.depth) == (50, 50, 10.0)


def test_pinhole_arithmetic():
    s = G.project_point(K, G.Point3(1.0, 0.0, 10.0))
    assert (s.row, s.col, s.depth) == (50, 60, 10.0)


def test_behind_camera_is_none():
    assert G.project_point(K, G.Point3(0.0, 0.0, -1.0)) is None


def test_out_of_bounds_is_none():
    assert G.project_point(K, G.Point3(100.0, 0.0, 10.0)) is None


def test_backproject_center():
    p = G.backproject(K, 50, 50, 10.0)
    assert (p.x, p.y, p.z) == (0.0, 0.0, 10.0)


def test_backproject_zero_depth_rejected():
    with pytest.raises(UsageError):
        G.backproject(K, 10, 10, 0.0)


def test_roundtrip_pixel_exact():
    rng = np.random.default_rng(100)
    rows = rng.integers(0, K.height, size=1000)
    cols = rng.integers(0, K.width, size=1000)
    depths = rng.uniform(0.5, 80.0, size=1000)
    for r, c, d in zip(rows, cols, depths):
        p = G.backproject(K, int(r), int(c), float(d))
        s = G.project_point(K, p)
        assert s is not None
        assert s.row == r and s.col == c
        assert abs(s.depth - d) < 1e-9


def _random_pose(rng):
    # QR of a random matrix gives an orthonormal frame; fix the sign
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return G.RigidPose(q, rng.normal(size=3))


def test_identity_pose():
    p = G.Point3(1.0, 2.0, 3.0)
    out = G.transform(G.RigidPose.identity(), p)
    assert (out.x, out.y, out.z) == (1.0, 2.0, 3.0)


def test_pure_translation():
    pose = G.RigidPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    out = G.transform(pose, G.Point3(0.0, 0.0, 10.0))
    assert (out.x, out.y, out.z) == (0.0, 0.0, 11.0)


def test_inverse_roundtrip_1000():
    rng = np.random.default_rng(101)
    for _ in range(1000):
        pose = _random_pose(rng)
        p = G.Point3(*rng.normal(scale=10.0, size=3))
        back = G.transform(pose.inverse(), G.transform(pose, p))
        assert abs(back.x - p.x) < 1e-9
        assert abs(back.y - p.y) < 1e-9
        assert abs(back.z - p.z) < 1e-9


def test_transform_preserves_distances():
    rng = np.random.default_rng(102)
    pts = rng.normal(scale=5.0, size=(50, 3))
    pose = _random_pose(rng)
    out = G.transform_points(pose, pts)
    d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
    assert np.abs(d_in - d_out).max() < 1e-9


def test_bad_rotation_rejected():
    with pytest.raises(ConfigurationError):
        G.RigidPose(np.eye(3) * 2.0, np.zeros(3))
    flip = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ConfigurationError):
        G.RigidPose(flip, np.zeros(3))


def test_rasterize_empty():
    raster = G.rasterize([], K)
    assert raster.shape == (100, 100)
    assert np.all(raster == 0.0)


def test_rasterize_collision_keeps_nearest():
    p_far = G.backproject(K, 30, 40, 9.0)
    p_near = G.backproject(K, 30, 40, 5.0)
    raster = G.rasterize([p_far, p_near], K)
    assert raster[30, 40] == np.float32(5.0)
    assert np.count_nonzero(raster) == 1


def test_rasterize_on_axis_single_pixel():
    raster = G.rasterize([G.Point3(0.0, 0.0, 10.0)], K)
    assert raster[50, 50] == np.float32(10.0)
    assert np.count_nonzero(raster) == 1


def test_rasterize_matches_bruteforce_min():
    rng = np.random.default_rng(103)
    pts = np.column_stack([
        rng.uniform(-5, 5, size=2000),
        rng.uniform(-5, 5, size=2000),
        rng.uniform(0.5, 30.0, size=2000),
    ])
    raster = G.rasterize(pts, K)

    expected = np.zeros((100, 100), dtype=np.float64)
    best = {}
    for x, y, z in pts:
        col = int(np.floor(K.cx + K.fx * x / z + 0.5))
        row = int(np.floor(K.cy + K.fy * y / z + 0.5))
        if 0 <= row < 100 and 0 <= col < 100:
            key = (row, col)
            if key not in best or z < best[key]:
                best[key] = z
    for (row, col), z in best.items():
        expected[row, col] = z
    assert np.allclose(raster, expected.astype(np.float32))
