"""Resize-crop consistency, radar lift, random height."""

import numpy as np
import pytest
from scipy import stats

from ptclab import disruption as D
from ptclab import simsensor as S
from ptclab.errors import ConfigurationError
from ptclab.geometry import CameraIntrinsics

CFG = S.SimConfig()
K = CFG.intrinsics()


def test_identity_transform_is_identity():
    bundle = S.generate_bundle(1, CFG)
    crop = D.CropTransform.identity(CFG.height, CFG.width)
    out = D.apply_crop(bundle, crop)
    assert np.allclose(out.image, bundle.image, atol=1e-6)
    assert np.array_equal(out.dense_gt, bundle.dense_gt)
    assert np.array_equal(out.mask, bundle.mask)
    assert np.array_equal(out.lidar, bundle.lidar)
    assert np.array_equal(out.radar_raster, bundle.radar_raster)
    assert out.intrinsics == bundle.intrinsics


def test_disabled_disruptions_identity():
    bundle = S.generate_bundle(2, CFG)
    out = D.apply_disruptions(bundle, D.DisruptionConfig(), np.random.default_rng(0))
    assert out is bundle


def test_crop_arithmetic_128x192():
    cfg = D.DisruptionConfig(enable_2d=True, scale_low=1.5, scale_high=1.5,
                             crop_h=128, crop_w=192)
    offsets_r, offsets_c = set(), set()
    for seed in range(300):
        crop = D.draw_crop(np.random.default_rng(seed), cfg, 128, 192)
        assert crop.scale == 1.5
        assert 0 <= crop.off_r <= 64 and 0 <= crop.off_c <= 96
        offsets_r.add(crop.off_r)
        offsets_c.add(crop.off_c)
    assert min(offsets_r) < 5 and max(offsets_r) > 59
    assert min(offsets_c) < 8 and max(offsets_c) > 88


def test_crop_larger_than_scaled_rejected():
    cfg = D.DisruptionConfig(enable_2d=True, scale_low=1.0, scale_high=1.0,
                             crop_h=64, crop_w=64)
    with pytest.raises(ConfigurationError):
        D.draw_crop(np.random.default_rng(0), cfg, 48, 64)


def test_scale_bounds_validated():
    with pytest.raises(ConfigurationError):
        D.DisruptionConfig(scale_low=0.8, scale_high=1.2)


def test_lidar_consistent_with_transformed_dense():
    cfg = D.DisruptionConfig(enable_2d=True)
    for seed in range(10):
        bundle = S.generate_bundle(100 + seed, CFG)
        out = D.resize_crop(bundle, cfg, np.random.default_rng(seed))
        rr, cc = np.nonzero(out.lidar > 0)
        assert rr.size > 30
        # nearest-neighbor tolerance: compare against the 3x3 dense patch
        for r, c in zip(rr, cc):
            r0, r1 = max(r - 1, 0), min(r + 2, out.dense_gt.shape[0])
            c0, c1 = max(c - 1, 0), min(c + 2, out.dense_gt.shape[1])
            patch = out.dense_gt[r0:r1, c0:c1]
            assert np.abs(patch - out.lidar[r, c]).min() < 1e-3


def test_rescaled_intrinsics_track_points():
    cfg = D.DisruptionConfig(enable_2d=True)
    from ptclab.geometry import project_points
    hits = total = 0
    for seed in range(10):
        bundle = S.generate_bundle(200 + seed, CFG)
        crop = D.draw_crop(np.random.default_rng(seed), cfg, CFG.height, CFG.width)
        out = D.apply_crop(bundle, crop)
        # re-projecting the untouched 3D points through the rescaled
        # intrinsics must land on the remapped raster support (within 1 px)
        rows, cols, _, valid = project_points(out.intrinsics, out.radar_points)
        support = out.radar_raster > 0
        for r, c in zip(rows[valid], cols[valid]):
            total += 1
            r0, r1 = max(r - 1, 0), min(r + 2, crop.out_h)
            c0, c1 = max(c - 1, 0), min(c + 2, crop.out_w)
            if support[r0:r1, c0:c1].any():
                hits += 1
    assert total > 100
    assert hits / total > 0.98


def test_lift_fills_column():
    k = CameraIntrinsics(fx=16.0, fy=16.0, cx=7.5, cy=7.5, width=16, height=16)
    # point projecting to (row 7, col 4) with depth 12.5
    x = (4 - k.cx) * 12.5 / k.fx
    y = (7 - k.cy) * 12.5 / k.fy
    raster = D.lift_radar(np.array([[x, y, 12.5]]), k)
    assert np.all(raster[:, 4] == np.float32(12.5))
    assert np.count_nonzero(raster) == 16


def test_lift_empty_points():
    raster = D.lift_radar(np.zeros((0, 3)), K)
    assert np.all(raster == 0.0)


def test_lift_same_column_keeps_nearest():
    k = CameraIntrinsics(fx=16.0, fy=16.0, cx=7.5, cy=7.5, width=16, height=16)
    pts = np.array([
        [(4 - k.cx) * 9.0 / k.fx, 0.0, 9.0],
        [(4 - k.cx) * 5.0 / k.fx, 0.3, 5.0],
    ])
    raster = D.lift_radar(pts, k)
    assert np.all(raster[:, 4] == np.float32(5.0))


def test_lift_support_is_union_of_columns():
    bundle = S.generate_bundle(9, CFG)
    raster = D.lift_radar(bundle.radar_points, K)
    occupied = np.nonzero(raster.any(axis=0))[0]
    for col in occupied:
        assert np.all(raster[:, col] > 0)
    assert len(occupied) <= len(bundle.radar_points)


def test_lift_rows_out_of_frame_still_fill_column():
    # elevation so erroneous the point projects far above the image
    pts = np.array([[0.0, -200.0, 10.0]])
    raster = D.lift_radar(pts, K)
    col = int(np.floor(K.cx + 0.5))
    assert np.all(raster[:, col] == np.float32(10.0))


def test_random_height_preserves_xz():
    bundle = S.generate_bundle(10, CFG)
    out = D.random_height(bundle.radar_points, np.random.default_rng(1))
    assert np.array_equal(out[:, 0], bundle.radar_points[:, 0])
    assert np.array_equal(out[:, 2], bundle.radar_points[:, 2])


def test_random_height_same_seed_identical():
    bundle = S.generate_bundle(11, CFG)
    a = D.random_height(bundle.radar_points, np.random.default_rng(5))
    b = D.random_height(bundle.radar_points, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_random_height_uniformity_ks():
    pts = np.zeros((10_000, 3))
    out = D.random_height(pts, np.random.default_rng(6))
    stat = stats.kstest(out[:, 1], stats.uniform(loc=-2.0, scale=4.0).cdf)
    assert stat.pvalue > 0.01


def test_full_pipeline_label_consistency():
    cfg = D.DisruptionConfig(enable_2d=True, enable_3d=True, mode_3d="lift")
    bundle = S.generate_bundle(12, CFG)
    out = D.apply_disruptions(bundle, cfg, np.random.default_rng(3))
    rr, cc = np.nonzero(out.lidar > 0)
    for r, c in zip(rr, cc):
        r0, r1 = max(r - 1, 0), min(r + 2, out.dense_gt.shape[0])
        c0, c1 = max(c - 1, 0), min(c + 2, out.dense_gt.shape[1])
        assert np.abs(out.dense_gt[r0:r1, c0:c1] - out.lidar[r, c]).min() < 1e-3
    occupied = np.nonzero(out.radar_raster.any(axis=0))[0]
    for col in occupied:
        assert np.all(out.radar_raster[:, col] > 0)
