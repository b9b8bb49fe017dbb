"""Position-correspondence disruptions, applied consistently across channels.

The 2D disruption is a random up-scale (U(scale_low, scale_high)) followed
by a fixed-size crop; one CropTransform drives every channel so training
pairs stay geometrically truthful. The 3D disruption either lifts each
projected radar point into a full-height column of constant depth or
re-randomizes the points' heights.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraIntrinsics, project_points, rasterize
from .simsensor import SampleBundle


@dataclass
class DisruptionConfig:
    enable_2d: bool = False
    scale_low: float = 1.0
    scale_high: float = 1.5
    enable_3d: bool = False
    mode_3d: str = "lift"        # lift | random_height
    crop_h: int = None           # defaults to the raster extents
    crop_w: int = None

    def __post_init__(self):
        if not (1.0 <= self.scale_low <= self.scale_high):
            raise ConfigurationError(
                f"need 1.0 <= scale_low <= scale_high, got {self.scale_low}, {self.scale_high}")
        if self.mode_3d not in ("lift", "random_height"):
            raise ConfigurationError(f"unknown mode_3d {self.mode_3d!r}")


class CropTransform:
    """One scale-then-crop map shared by dense, sparse and point channels.

    Output coordinate u' of a source coordinate u is F(u) = (u+0.5)*s - 0.5 - off
    (pixel-center convention), so dense gathers, sparse scatters and the
    rescaled intrinsics all agree.
    """

    def __init__(self, scale: float, off_r: int, off_c: int, out_h: int, out_w: int,
                 src_h: int, src_w: int):
        self.scale = scale
        self.off_r = off_r
        self.off_c = off_c
        self.out_h = out_h
        self.out_w = out_w
        self.src_h = src_h
        self.src_w = src_w

    @staticmethod
    def identity(h: int, w: int) -> "CropTransform":
        return CropTransform(1.0, 0, 0, h, w, h, w)

    def forward_rc(self, r, c):
        fr = (np.asarray(r, dtype=np.float64) + 0.5) * self.scale - 0.5 - self.off_r
        fc = (np.asarray(c, dtype=np.float64) + 0.5) * self.scale - 0.5 - self.off_c
        return fr, fc

    def _source_grid(self):
        rows = (np.arange(self.out_h) + self.off_r + 0.5) / self.scale - 0.5
        cols = (np.arange(self.out_w) + self.off_c + 0.5) / self.scale - 0.5
        return rows, cols

    def resize_dense(self, arr: np.ndarray, mode: str) -> np.ndarray:
        rows, cols = self._source_grid()
        if mode == "nearest":
            ri = np.clip(np.floor(rows + 0.5).astype(int), 0, self.src_h - 1)
            ci = np.clip(np.floor(cols + 0.5).astype(int), 0, self.src_w - 1)
            return arr[np.ix_(ri, ci)].astype(arr.dtype)
        if mode == "bilinear":
            r0 = np.clip(np.floor(rows).astype(int), 0, self.src_h - 1)
            c0 = np.clip(np.floor(cols).astype(int), 0, self.src_w - 1)
            r1 = np.minimum(r0 + 1, self.src_h - 1)
            c1 = np.minimum(c0 + 1, self.src_w - 1)
            wr = np.clip(rows - r0, 0.0, 1.0)[:, None]
            wc = np.clip(cols - c0, 0.0, 1.0)[None, :]
            a = arr[np.ix_(r0, c0)] * (1 - wr) * (1 - wc)
            b = arr[np.ix_(r0, c1)] * (1 - wr) * wc
            c = arr[np.ix_(r1, c0)] * wr * (1 - wc)
            d = arr[np.ix_(r1, c1)] * wr * wc
            return (a + b + c + d).astype(arr.dtype)
        raise ConfigurationError(f"unknown resize mode {mode!r}")

    def remap_sparse(self, arr: np.ndarray) -> np.ndarray:
        """Move each valid pixel to its scaled location; depths unchanged,
        nearest assignment, z-buffer on collision."""
        out = np.zeros((self.out_h, self.out_w), dtype=arr.dtype)
        rr, cc = np.nonzero(arr > 0)
        if rr.size == 0:
            return out
        fr, fc = self.forward_rc(rr, cc)
        ri = np.floor(fr + 0.5).astype(int)
        ci = np.floor(fc + 0.5).astype(int)
        keep = (ri >= 0) & (ri < self.out_h) & (ci >= 0) & (ci < self.out_w)
        if not keep.any():
            return out
        buf = np.full((self.out_h, self.out_w), np.inf)
        np.minimum.at(buf, (ri[keep], ci[keep]), arr[rr[keep], cc[keep]].astype(np.float64))
        hit = np.isfinite(buf)
        out[hit] = buf[hit].astype(arr.dtype)
        return out

    def rescale_intrinsics(self, k: CameraIntrinsics) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=k.fx * self.scale, fy=k.fy * self.scale,
            cx=(k.cx + 0.5) * self.scale - 0.5 - self.off_c,
            cy=(k.cy + 0.5) * self.scale - 0.5 - self.off_r,
            width=self.out_w, height=self.out_h,
        )


def draw_crop(rng: np.random.Generator, cfg: DisruptionConfig,
              src_h: int, src_w: int) -> CropTransform:
    scale = float(rng.uniform(cfg.scale_low, cfg.scale_high))
    crop_h = cfg.crop_h if cfg.crop_h is not None else src_h
    crop_w = cfg.crop_w if cfg.crop_w is not None else src_w
    scaled_h = int(np.floor(src_h * scale))
    scaled_w = int(np.floor(src_w * scale))
    if crop_h > scaled_h or crop_w > scaled_w:
        raise ConfigurationError(
            f"crop {crop_h}x{crop_w} larger than scaled raster {scaled_h}x{scaled_w}")
    off_r = int(rng.integers(0, scaled_h - crop_h + 1))
    off_c = int(rng.integers(0, scaled_w - crop_w + 1))
    return CropTransform(scale, off_r, off_c, crop_h, crop_w, src_h, src_w)


def apply_crop(bundle: SampleBundle, crop: CropTransform) -> SampleBundle:
    return replace(
        bundle,
        image=crop.resize_dense(bundle.image, "bilinear"),
        dense_gt=crop.resize_dense(bundle.dense_gt, "nearest"),
        mask=crop.resize_dense(bundle.mask, "nearest"),
        lidar=crop.remap_sparse(bundle.lidar),
        radar_raster=crop.remap_sparse(bundle.radar_raster),
        intrinsics=crop.rescale_intrinsics(bundle.intrinsics),
    )


def resize_crop(bundle: SampleBundle, cfg: DisruptionConfig,
                rng: np.random.Generator) -> SampleBundle:
    crop = draw_crop(rng, cfg, bundle.image.shape[0], bundle.image.shape[1])
    return apply_crop(bundle, crop)


def lift_radar(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Each projected point fills its entire image column with its depth;
    column collisions keep the nearest depth."""
    out = np.zeros((k.height, k.width), dtype=np.float32)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        return out
    _, cols, depth, valid = project_points(k, points)
    # a lifted point is visible in any row, so only the column must be in frame
    in_width = (points[:, 2] > 1e-6) & (cols >= 0) & (cols < k.width)
    if not in_width.any():
        return out
    buf = np.full(k.width, np.inf)
    np.minimum.at(buf, cols[in_width], depth[in_width])
    hit = np.isfinite(buf)
    out[:, hit] = buf[hit].astype(np.float32)[None, :]
    return out


def random_height(points: np.ndarray, rng: np.random.Generator,
                  y_range=(-2.0, 2.0)) -> np.ndarray:
    """Replace each point's height with a fresh uniform draw; x, z unchanged."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = points.copy()
    out[:, 1] = rng.uniform(y_range[0], y_range[1], size=points.shape[0])
    return out


def apply_disruptions(bundle: SampleBundle, cfg: DisruptionConfig,
                      rng: np.random.Generator) -> SampleBundle:
    """Full pipeline: 2D resize-crop, then the 3D radar disruption through
    the (possibly rescaled) intrinsics. Both disabled -> identity."""
    if cfg.enable_2d:
        bundle = resize_crop(bundle, cfg, rng)
    if cfg.enable_3d:
        if cfg.mode_3d == "lift":
            bundle = replace(bundle,
                             radar_raster=lift_radar(bundle.radar_points,
                                                     bundle.intrinsics))
        else:
            pts = random_height(bundle.radar_points, rng)
            bundle = replace(bundle, radar_points=pts,
                             radar_raster=rasterize(pts, bundle.intrinsics))
    return bundle
