"""Synthetic scenes and sensor simulators.

A scene is a ground plane plus labeled axis-aligned boxes, ray-cast
analytically, which makes the dense ground-truth depth exact — the
instrument that lets us measure error off the LiDAR scanlines. LiDAR
samples fixed elevation rings (fixed image rows for every scene at fixed
intrinsics); radar hits reflective objects with accurate ground-plane
position and deliberately erroneous elevation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraIntrinsics, rasterize
from .seeding import rng_for

PLANE_ID = -1
MISS_ID = -2


@dataclass
class SceneObject:
    center: np.ndarray          # (3,) camera frame, meters
    size: np.ndarray            # (3,) full extents, meters
    class_id: int
    reflective: bool
    albedo: float
    velocity: np.ndarray        # (3,) meters per frame


@dataclass
class SceneSpec:
    ground_height: float
    objects: list
    seed: int


@dataclass
class SceneConfig:
    min_objects: int = 3
    max_objects: int = 12
    depth_min: float = 2.0
    depth_max: float = 70.0
    size_min: float = 0.5
    size_max: float = 4.0
    reflective_height: tuple = (3.0, 4.0)
    other_height: tuple = (0.5, 3.0)
    reflective_prob: float = 0.6
    x_tan: float = 0.6
    y_tan: float = 0.45
    ground_height: float = 1.5
    n_classes: int = 8
    n_moving: int = 0
    move_speed: float = 0.5
    ground_albedo: float = 0.35
    checker_period: float = 3.0
    checker_contrast: float = 0.3
    back_wall: bool = False           # facade closing the horizon
    wall_depth: tuple = (48.0, 56.0)
    wall_height: float = 12.0
    wall_reflective: bool = False


@dataclass
class RadarConfig:
    n_min: int = 50
    n_max: int = 80
    sigma_r: float = 0.3
    tangential: float = 0.2
    elevation_mode: str = "uniform"   # uniform | fixed | fixed_angle | noisy
    elevation_range: tuple = (-2.0, 2.0)
    fixed_y: float = 1.0
    beam_row_offset: float = 0.5      # fixed_angle: boresight row below center
    sigma_elev: float = 0.25
    max_depth: float = 80.0


@dataclass
class SimConfig:
    height: int = 48
    width: int = 64
    focal: float = None           # defaults to 0.75 * width
    max_range: float = 80.0
    n_scanlines: int = 10
    scanline_spacing: int = 4
    azimuth_step_deg: float = 1.4
    sigma_lidar: float = 0.0
    image_noise_sigma: float = 0.01
    sky_intensity: float = 0.75
    sky_jitter: float = 0.0       # per-scene uniform jitter of the sky level
    shade_slope: float = 0.65     # 0 disables the depth shading cue
    scanline_last_row: int = None  # defaults to height - 3
    radar: RadarConfig = field(default_factory=RadarConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)

    def intrinsics(self) -> CameraIntrinsics:
        f = self.focal if self.focal is not None else 0.75 * self.width
        return CameraIntrinsics(fx=f, fy=f, cx=self.width / 2 - 0.5,
                                cy=self.height / 2 - 0.5,
                                width=self.width, height=self.height)


@dataclass
class SampleBundle:
    """One training example; all rasters share H x W."""
    image: np.ndarray            # intensity in [0, 1]
    lidar: np.ndarray            # sparse depth, 0 = no sample
    radar_points: np.ndarray     # (n, 3) camera-frame points
    radar_raster: np.ndarray     # sparse depth, 0 = no sample
    mask: np.ndarray             # binary radar-aware mask
    dense_gt: np.ndarray         # all pixels valid, capped at max_range
    intrinsics: CameraIntrinsics
    scene: SceneSpec
    scene_seed: int


# ---------------------------------------------------------------------------
# scene sampling


def sample_scene(rng: np.random.Generator, cfg: SceneConfig, seed: int = 0) -> SceneSpec:
    """Deterministic box-world scene: 3-12 boxes, >=1 reflective when any."""
    if cfg.max_objects == 0:
        return SceneSpec(ground_height=cfg.ground_height, objects=[], seed=seed)
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects = []
    for i in range(n):
        reflective = True if i == 0 else bool(rng.random() < cfg.reflective_prob)
        sx = rng.uniform(cfg.size_min, cfg.size_max)
        sz = rng.uniform(cfg.size_min, cfg.size_max)
        sy = rng.uniform(*(cfg.reflective_height if reflective else cfg.other_height))
        y_center = cfg.ground_height - sy / 2
        # center stays inside the frustum and in front of the camera
        z_lo = max(cfg.depth_min, 1.0 + sz / 2, abs(y_center) / cfg.y_tan)
        z = rng.uniform(z_lo, cfg.depth_max)
        x = rng.uniform(-z * cfg.x_tan, z * cfg.x_tan)
        velocity = np.zeros(3)
        if i < cfg.n_moving:
            direction = 1.0 if rng.random() < 0.5 else -1.0
            velocity = np.array([direction * cfg.move_speed, 0.0, 0.0])
        objects.append(SceneObject(
            center=np.array([x, y_center, z]),
            size=np.array([sx, sy, sz]),
            class_id=int(rng.integers(0, cfg.n_classes)),
            reflective=reflective,
            albedo=float(rng.uniform(0.2, 1.0)),
            velocity=velocity,
        ))
    if cfg.back_wall:
        zw = rng.uniform(*cfg.wall_depth)
        objects.append(SceneObject(
            center=np.array([0.0, cfg.ground_height - cfg.wall_height / 2, zw]),
            size=np.array([4.0 * zw * cfg.x_tan, cfg.wall_height, 1.0]),
            class_id=int(rng.integers(0, cfg.n_classes)),
            reflective=cfg.wall_reflective,
            albedo=float(rng.uniform(0.3, 0.9)),
            velocity=np.zeros(3),
        ))
    return SceneSpec(ground_height=cfg.ground_height, objects=objects, seed=seed)


# ---------------------------------------------------------------------------
# analytic ray casting


def _box_bounds(scene: SceneSpec, frame: int = 0):
    if not scene.objects:
        return np.zeros((0, 3)), np.zeros((0, 3))
    centers = np.stack([o.center + frame * o.velocity for o in scene.objects])
    half = np.stack([o.size for o in scene.objects]) / 2.0
    return centers - half, centers + half


def cast_rays(scene: SceneSpec, dirs: np.ndarray, origin=None, frame: int = 0):
    """Nearest intersection along each ray.

    Returns (t, hit_id): ray parameter of the nearest hit (inf if none)
    and PLANE_ID / box index / MISS_ID. `dirs` need not be normalized;
    depth along a dir with dz=1 equals t.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    m = dirs.shape[0]
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    eps = 1e-9

    # ground plane y = h
    dy = dirs[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (scene.ground_height - origin[1]) / dy
    t_plane = np.where((dy > eps) & (t_plane > eps), t_plane, np.inf)

    lo, hi = _box_bounds(scene, frame)
    if lo.shape[0]:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs                                   # (m, 3), inf on zeros
            a = (lo[None, :, :] - origin[None, None, :]) * inv[:, None, :]
            b = (hi[None, :, :] - origin[None, None, :]) * inv[:, None, :]
        t1 = np.minimum(a, b)
        t2 = np.maximum(a, b)
        zero = np.abs(dirs) < eps                              # parallel to slab
        if zero.any():
            inside = (origin[None, None, :] >= lo[None, :, :]) & \
                     (origin[None, None, :] <= hi[None, :, :])
            z3 = np.broadcast_to(zero[:, None, :], t1.shape)
            t1 = np.where(z3, np.where(inside, -np.inf, np.inf), t1)
            t2 = np.where(z3, np.where(inside, np.inf, -np.inf), t2)
        tmin = t1.max(axis=2)
        tmax = t2.min(axis=2)
        hit = (tmax >= tmin) & (tmin > eps)
        t_box = np.where(hit, tmin, np.inf)                    # (m, nboxes)
        best_box = np.argmin(t_box, axis=1)
        t_best_box = t_box[np.arange(m), best_box]
    else:
        best_box = np.zeros(m, dtype=np.int64)
        t_best_box = np.full(m, np.inf)

    t = np.where(t_best_box < t_plane, t_best_box, t_plane)
    hit_id = np.where(t_best_box < t_plane, best_box, PLANE_ID)
    hit_id = np.where(np.isinf(t), MISS_ID, hit_id)
    return t, hit_id


@functools.lru_cache(maxsize=16)
def _pixel_dirs(k: CameraIntrinsics) -> np.ndarray:
    rows, cols = np.mgrid[0:k.height, 0:k.width]
    u = (cols - k.cx) / k.fx
    v = (rows - k.cy) / k.fy
    return np.stack([u.ravel(), v.ravel(), np.ones(u.size)], axis=1)


def cast_frame(scene: SceneSpec, k: CameraIntrinsics, max_range: float = 80.0):
    """Per-pixel nearest hit: (depth HxW capped at max_range, hit_id HxW)."""
    t, hit_id = cast_rays(scene, _pixel_dirs(k))
    depth = np.minimum(t, max_range)
    hit_id = np.where(t > max_range, MISS_ID, hit_id)
    return (depth.reshape(k.height, k.width).astype(np.float32),
            hit_id.reshape(k.height, k.width).astype(np.int64))


def render_dense_depth(scene: SceneSpec, k: CameraIntrinsics,
                       max_range: float = 80.0) -> np.ndarray:
    return cast_frame(scene, k, max_range)[0]


def render_image(scene: SceneSpec, k: CameraIntrinsics, rng: np.random.Generator,
                 cfg: SimConfig, depth=None, hit_id=None) -> np.ndarray:
    """Albedo x depth shading + Gaussian noise, clamped to [0, 1]."""
    if depth is None or hit_id is None:
        depth, hit_id = cast_frame(scene, k, cfg.max_range)
    sc = cfg.scene
    sky = cfg.sky_intensity
    if cfg.sky_jitter > 0:
        sky = sky + rng.uniform(-cfg.sky_jitter, cfg.sky_jitter)
    albedo = np.full(depth.shape, sky, dtype=np.float64)
    shade = 1.0 - cfg.shade_slope * depth / cfg.max_range

    plane = hit_id == PLANE_ID
    if plane.any():
        dirs = _pixel_dirs(k).reshape(k.height, k.width, 3)
        gx = depth * dirs[:, :, 0]
        gz = depth * 1.0
        checker = np.sign(np.sin(np.pi * gx / sc.checker_period) *
                          np.sin(np.pi * gz / sc.checker_period))
        albedo[plane] = sc.ground_albedo * (1.0 + sc.checker_contrast * checker[plane])

    for i, obj in enumerate(scene.objects):
        sel = hit_id == i
        if sel.any():
            albedo[sel] = obj.albedo

    surface = hit_id >= PLANE_ID
    image = np.where(surface, albedo * shade, sky)
    if cfg.image_noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.image_noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def radar_aware_mask(scene: SceneSpec, k: CameraIntrinsics, max_range: float = 80.0,
                     depth=None, hit_id=None) -> np.ndarray:
    """1 where the nearest surface belongs to a reflective object."""
    if depth is None or hit_id is None:
        depth, hit_id = cast_frame(scene, k, max_range)
    mask = np.zeros(depth.shape, dtype=np.float32)
    for i, obj in enumerate(scene.objects):
        if obj.reflective:
            mask[hit_id == i] = 1.0
    return mask


# ---------------------------------------------------------------------------
# LiDAR


def scanline_rows(cfg: SimConfig) -> np.ndarray:
    """Fixed image rows of the elevation rings, bottom ring at H-3."""
    last = cfg.scanline_last_row if cfg.scanline_last_row is not None \
        else cfg.height - 3
    rows = last - cfg.scanline_spacing * np.arange(cfg.n_scanlines)[::-1]
    if rows[0] < 0:
        raise ConfigurationError(
            f"{cfg.n_scanlines} scanlines at spacing {cfg.scanline_spacing} "
            f"do not fit {cfg.height} rows")
    return rows


def scanline_cols(k: CameraIntrinsics, azimuth_step_deg: float) -> np.ndarray:
    az_min = np.arctan((0 - k.cx) / k.fx)
    az_max = np.arctan((k.width - 1 - k.cx) / k.fx)
    az = np.arange(az_min, az_max + 1e-12, np.deg2rad(azimuth_step_deg))
    cols = np.floor(k.cx + k.fx * np.tan(az) + 0.5).astype(np.int64)
    return np.unique(cols[(cols >= 0) & (cols < k.width)])


def simulate_lidar(scene: SceneSpec, k: CameraIntrinsics, cfg: SimConfig,
                   rng: np.random.Generator = None, dense=None) -> np.ndarray:
    """Scanline samples of the scene; support pattern is identical for every
    scene at fixed intrinsics. Sample depth equals the dense ground truth at
    the sample's pixel (plus sigma_lidar noise)."""
    if dense is None:
        dense = render_dense_depth(scene, k, cfg.max_range)
    rows = scanline_rows(cfg)
    cols = scanline_cols(k, cfg.azimuth_step_deg)
    out = np.zeros((k.height, k.width), dtype=np.float32)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    vals = dense[rr, cc].astype(np.float64)
    returned = vals < cfg.max_range          # no return at or beyond max range
    if cfg.sigma_lidar > 0 and rng is not None:
        vals = vals + rng.normal(0.0, cfg.sigma_lidar, size=vals.shape)
        vals = np.maximum(vals, 1e-3)
    out[rr[returned], cc[returned]] = vals[returned].astype(np.float32)
    return out


def accumulate_frames(scene: SceneSpec, k: CameraIntrinsics, cfg: SimConfig,
                      k_frames: int, pose_jitter_sigma: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Multi-frame stacking with jittered poses and a wrongly-static world.

    Each frame's samples are reprojected into the reference frame assuming
    exact (identity) poses, so jitter and object motion ghost into the
    raster. k=1 with zero jitter reproduces simulate_lidar exactly.
    """
    if k_frames < 1:
        raise ConfigurationError(f"k_frames must be >= 1, got {k_frames}")
    rows = scanline_rows(cfg)
    cols = scanline_cols(k, cfg.azimuth_step_deg)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    u = (cc.ravel() - k.cx) / k.fx
    v = (rr.ravel() - k.cy) / k.fy
    dirs = np.stack([u, v, np.ones(u.size)], axis=1)

    measured = []
    for frame in range(k_frames):
        origin = rng.normal(0.0, pose_jitter_sigma, size=3) if pose_jitter_sigma > 0 \
            else np.zeros(3)
        t, hit_id = cast_rays(scene, dirs, origin=origin, frame=frame)
        ok = np.isfinite(t) & (t < cfg.max_range)
        pts = t[ok, None] * dirs[ok]          # sensor-frame coordinates
        if cfg.sigma_lidar > 0:
            pts[:, 2] = np.maximum(pts[:, 2] + rng.normal(0.0, cfg.sigma_lidar,
                                                          size=pts.shape[0]), 1e-3)
        measured.append(pts)
    if not measured:
        return np.zeros((k.height, k.width), dtype=np.float32)
    return rasterize(np.concatenate(measured, axis=0), k)


def downsample_lidar(sparse: np.ndarray, factor: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Keep each valid sample independently with probability 1/factor."""
    if factor < 1:
        raise ConfigurationError(f"factor must be >= 1, got {factor}")
    keep = rng.random(sparse.shape) < (1.0 / factor)
    return np.where((sparse > 0) & keep, sparse, 0.0).astype(np.float32)


# ---------------------------------------------------------------------------
# radar


def simulate_radar(scene: SceneSpec, k: CameraIntrinsics, rng: np.random.Generator,
                   cfg: RadarConfig, max_range: float = 80.0,
                   depth=None, hit_id=None) -> np.ndarray:
    """Radar returns from reflective surfaces: accurate (x, z), erroneous y.

    Candidate surface points are visible reflective-object pixels within
    max_depth; (x, z) gets radial sigma_r noise plus tangential jitter,
    and y is drawn per elevation_mode (uniform / fixed / noisy).
    """
    if depth is None or hit_id is None:
        depth, hit_id = cast_frame(scene, k, max_range)
    reflective = np.zeros(depth.shape, dtype=bool)
    for i, obj in enumerate(scene.objects):
        if obj.reflective:
            reflective |= hit_id == i
    candidates = np.flatnonzero(reflective & (depth <= cfg.max_depth))
    if candidates.size == 0:
        return np.zeros((0, 3))

    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    picks = rng.choice(candidates, size=n, replace=True)
    rows, cols = np.unravel_index(picks, depth.shape)
    d = depth[rows, cols].astype(np.float64)
    x = (cols - k.cx) * d / k.fx
    y_true = (rows - k.cy) * d / k.fy
    z = d

    r = np.sqrt(x * x + z * z)
    ux, uz = x / r, z / r
    # truncated at 3 sigma so every point stays within the stated surface bound
    radial = np.clip(rng.normal(0.0, cfg.sigma_r, size=n),
                     -3 * cfg.sigma_r, 3 * cfg.sigma_r)
    tangential = rng.uniform(-cfg.tangential, cfg.tangential, size=n)
    x = x + ux * radial - uz * tangential
    z = np.maximum(z + uz * radial + ux * tangential, 0.3)

    if cfg.elevation_mode == "uniform":
        y = rng.uniform(cfg.elevation_range[0], cfg.elevation_range[1], size=n)
    elif cfg.elevation_mode == "fixed":
        y = np.full(n, cfg.fixed_y)
    elif cfg.elevation_mode == "fixed_angle":
        # no elevation resolution: every return reported at the boresight
        # elevation, so the whole point set projects onto one image row
        y = z * (cfg.beam_row_offset / k.fy)
    elif cfg.elevation_mode == "noisy":
        y = y_true + rng.normal(0.0, cfg.sigma_elev, size=n)
    else:
        raise ConfigurationError(f"unknown elevation_mode {cfg.elevation_mode!r}")
    return np.stack([x, y, z], axis=1)


# ---------------------------------------------------------------------------
# bundles


def generate_bundle(scene_seed: int, cfg: SimConfig) -> SampleBundle:
    """A SampleBundle is a pure function of (scene_seed, cfg)."""
    k = cfg.intrinsics()
    scene = sample_scene(rng_for("scene", scene_seed), cfg.scene, seed=scene_seed)
    depth, hit_id = cast_frame(scene, k, cfg.max_range)
    image = render_image(scene, k, rng_for("image", scene_seed), cfg,
                         depth=depth, hit_id=hit_id)
    lidar = simulate_lidar(scene, k, cfg, rng=rng_for("lidar", scene_seed),
                           dense=depth)
    radar_points = simulate_radar(scene, k, rng_for("radar", scene_seed),
                                  cfg.radar, cfg.max_range,
                                  depth=depth, hit_id=hit_id)
    radar_raster = rasterize(radar_points, k)
    mask = radar_aware_mask(scene, k, cfg.max_range, depth=depth, hit_id=hit_id)
    return SampleBundle(
        image=image, lidar=lidar, radar_points=radar_points,
        radar_raster=radar_raster, mask=mask, dense_gt=depth,
        intrinsics=k, scene=scene, scene_seed=scene_seed,
    )
