"""Losses, optimizer, augmentation pipeline and the experiment loop.

Supervision is sparse by default: the smooth-L1 loss is averaged over
valid-GT pixels only, so predictions at unsupervised pixels change the
loss by exactly zero. Bundles are generated on the fly from per-step
seeds; every run is a pure function of its config.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import tensor as T
from .disruption import DisruptionConfig, apply_crop, draw_crop, lift_radar, random_height
from .errors import ConfigurationError, TrainAbort
from .geometry import rasterize
from .model import DepthNet, ModelOutput, NetworkConfig
from .seeding import rng_for
from .simsensor import SimConfig, accumulate_frames, downsample_lidar, generate_bundle

SUPERVISION_MODES = ("sparse_single_frame", "noisy_dense_accumulated", "interpolated_dense")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    schedule: str = "cosine"            # constant | cosine
    steps: int = 3000
    batch_size: int = 8
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.25
    lambda_mask: float = 0.1
    supervision: str = "sparse_single_frame"
    photometric_aug: bool = True
    hflip_prob: float = 0.5
    accum_frames: int = 25
    accum_jitter_sigma: float = 0.05
    lidar_downsample_factor: int = 6

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.supervision not in SUPERVISION_MODES:
            raise ConfigurationError(f"unknown supervision {self.supervision!r}")
        for name in ("lambda1", "lambda2", "lambda3", "lambda_mask"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


def lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.schedule == "constant":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / cfg.steps))


# ---------------------------------------------------------------------------
# losses


def smooth_l1(pred: T.Tensor, gt: np.ndarray) -> T.Tensor:
    """Sparse-supervised smooth-L1: mean over pixels where gt > 0."""
    return T.masked_smooth_l1(pred, gt, gt > 0)


def downsample_gt(gt: np.ndarray, factor: int) -> np.ndarray:
    """Valid-preserving pooling: a coarse pixel is valid iff any source
    pixel is, and takes the nearest (smallest) source depth."""
    h, w = gt.shape[-2:]
    lead = gt.shape[:-2]
    blocks = gt.reshape(lead + (h // factor, factor, w // factor, factor))
    filled = np.where(blocks > 0, blocks, np.inf)
    pooled = filled.min(axis=(-3, -1))
    return np.where(np.isfinite(pooled), pooled, 0.0).astype(gt.dtype)


_SCALE_FACTOR = {1.0: 1, 0.5: 2, 0.25: 4}


def total_loss(output: ModelOutput, gt: np.ndarray, mask_gt, cfg: TrainConfig) -> T.Tensor:
    """lambda-weighted pyramid smooth-L1 plus optional mask BCE."""
    lambdas = {1.0: cfg.lambda1, 0.5: cfg.lambda2, 0.25: cfg.lambda3}
    loss = None
    for scale, pred in zip(output.scales, output.depth):
        lam = lambdas[scale]
        if lam == 0.0:
            continue
        gt_s = gt if scale == 1.0 else downsample_gt(gt, _SCALE_FACTOR[scale])
        term = T.mul(smooth_l1(pred, gt_s[:, None, :, :]), lam)
        loss = term if loss is None else T.add(loss, term)
    if output.mask_logits is not None and cfg.lambda_mask > 0.0 and mask_gt is not None:
        bce = T.bce_with_logits(output.mask_logits, mask_gt[:, None, :, :])
        loss = T.add(loss, T.mul(bce, cfg.lambda_mask))
    if loss is None:
        raise ConfigurationError("all loss weights are zero")
    return loss


def nearest_fill(sparse: np.ndarray) -> np.ndarray:
    """Dense raster from a sparse one by copying each pixel's nearest
    valid sample (the interpolated-dense supervision)."""
    valid = sparse > 0
    if not valid.any():
        return sparse.copy()
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return sparse[ri, ci]


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale1 = 1.0 / (1.0 - b1 ** self.t)
        scale2 = 1.0 / (1.0 - b2 ** self.t)
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * scale1) * m / (np.sqrt(v * scale2) + self.eps)


# ---------------------------------------------------------------------------
# sample pipeline


@dataclass
class PreparedSample:
    image: np.ndarray
    depth_in: np.ndarray            # or None
    points: np.ndarray
    gt: np.ndarray                  # supervision raster (training)
    mask_gt: np.ndarray
    dense_gt: np.ndarray
    lidar_support: np.ndarray       # eval-time LiDAR pattern (bool)


def _hflip_bundle(bundle, gt):
    flip = lambda a: np.ascontiguousarray(a[:, ::-1])
    points = bundle.radar_points.copy()
    if len(points):
        points[:, 0] *= -1.0          # exact mirror for a centered principal point
    bundle = replace(bundle, image=flip(bundle.image), lidar=flip(bundle.lidar),
                     radar_raster=flip(bundle.radar_raster), mask=flip(bundle.mask),
                     dense_gt=flip(bundle.dense_gt), radar_points=points)
    return bundle, flip(gt)


def build_supervision(bundle, exp, scene_seed: int) -> np.ndarray:
    mode = exp.train.supervision
    if mode == "sparse_single_frame":
        return bundle.lidar
    if mode == "noisy_dense_accumulated":
        return accumulate_frames(bundle.scene, bundle.intrinsics, exp.sim,
                                 k_frames=exp.train.accum_frames,
                                 pose_jitter_sigma=exp.train.accum_jitter_sigma,
                                 rng=rng_for("accum", scene_seed))
    return nearest_fill(bundle.lidar)


def prepare_sample(exp, scene_seed: int, aug_rng, training: bool) -> PreparedSample:
    bundle = generate_bundle(scene_seed, exp.sim)
    gt = build_supervision(bundle, exp, scene_seed) if training else bundle.lidar

    if training:
        if exp.train.hflip_prob > 0 and aug_rng.random() < exp.train.hflip_prob:
            bundle, gt = _hflip_bundle(bundle, gt)
        if exp.train.photometric_aug:
            gain = aug_rng.uniform(0.8, 1.2)
            offset = aug_rng.uniform(-0.1, 0.1)
            bundle = replace(bundle, image=np.clip(bundle.image * gain + offset,
                                                   0.0, 1.0).astype(np.float32))
        if exp.disruption.enable_2d:
            crop = draw_crop(aug_rng, exp.disruption, bundle.image.shape[0],
                             bundle.image.shape[1])
            if exp.train.supervision == "interpolated_dense":
                gt = crop.resize_dense(gt, "nearest")
            else:
                gt = crop.remap_sparse(gt)
            bundle = apply_crop(bundle, crop)

    if exp.disruption.enable_3d:
        if exp.disruption.mode_3d == "lift":
            bundle = replace(bundle, radar_raster=lift_radar(bundle.radar_points,
                                                             bundle.intrinsics))
        else:
            pts = random_height(bundle.radar_points,
                                aug_rng if training else rng_for("rh", scene_seed))
            bundle = replace(bundle, radar_points=pts,
                             radar_raster=rasterize(pts, bundle.intrinsics))

    depth_in = None
    if exp.network.depth_input == "radar":
        depth_in = bundle.radar_raster
    elif exp.network.depth_input == "sparse_lidar":
        depth_in = downsample_lidar(bundle.lidar, exp.train.lidar_downsample_factor,
                                    rng_for("slidar", scene_seed))
    return PreparedSample(image=bundle.image, depth_in=depth_in,
                          points=bundle.radar_points, gt=gt, mask_gt=bundle.mask,
                          dense_gt=bundle.dense_gt,
                          lidar_support=bundle.lidar > 0)


def stack_batch(samples):
    image = np.stack([s.image for s in samples])
    depth_in = None
    if samples[0].depth_in is not None:
        depth_in = np.stack([s.depth_in for s in samples])
    points = [s.points for s in samples]
    gt = np.stack([s.gt for s in samples])
    mask_gt = np.stack([s.mask_gt for s in samples])
    return image, depth_in, points, gt, mask_gt


# ---------------------------------------------------------------------------
# experiment loop


def validate_experiment(exp) -> None:
    if exp.disruption.enable_3d and exp.network.depth_input != "radar":
        raise ConfigurationError(
            "disruption.enable_3d: radar disruption requested but "
            f"network.depth_input is {exp.network.depth_input!r}")
    if exp.network.use_injection and exp.network.depth_input != "radar":
        raise ConfigurationError(
            "network.use_injection: radar injection requested but "
            f"network.depth_input is {exp.network.depth_input!r}")
    stride = 2 ** (len(exp.network.encoder_channels) - 1)
    h = exp.disruption.crop_h if (exp.disruption.enable_2d and exp.disruption.crop_h) \
        else exp.sim.height
    w = exp.disruption.crop_w if (exp.disruption.enable_2d and exp.disruption.crop_w) \
        else exp.sim.width
    if h % stride or w % stride:
        raise ConfigurationError(
            f"raster {h}x{w} not divisible by the encoder stride {stride}")


def step_seed(exp_seed: int, step: int, index: int) -> int:
    return int(rng_for("train-scene", exp_seed, step, index).integers(0, 2 ** 62))


def train_step(model: DepthNet, adam: Adam, batch, cfg: TrainConfig, lr: float,
               out_dir=None, step: int = -1) -> float:
    image, depth_in, points, gt, mask_gt = batch
    model.zero_grad()
    output = model.forward(image, depth_in,
                           points if model.cfg.use_injection else None)
    loss = total_loss(output, gt, mask_gt, cfg)
    value = loss.item()
    if not np.isfinite(value):
        snapshot = None
        if out_dir is not None:
            snapshot = f"{out_dir}/abort_step{step}.json"
            grads = {k: float(np.abs(p.grad).max()) if p.grad is not None else 0.0
                     for k, p in model.params.items()}
            with open(snapshot, "w") as f:
                json.dump({"step": step, "loss": value, "grad_maxabs": grads}, f, indent=1)
        raise TrainAbort(f"non-finite loss {value} at step {step}", snapshot)
    loss.backward()
    adam.step(lr)
    return value


@dataclass
class ExperimentResult:
    model: DepthNet
    records: list
    aggregate: dict
    loss_rows: list
    wall_time_s: float


def run_experiment(exp, out_dir=None) -> ExperimentResult:
    """Train per config, evaluate on the fixed held-out benchmark, and
    (optionally) write checkpoint + loss CSV + metrics CSV into out_dir."""
    from . import metrics as metrics_mod
    from .fileio import write_csv

    validate_experiment(exp)
    start = time.time()
    model = DepthNet(exp.network, rng_for("init", exp.seed))
    adam = Adam(model.params)
    cfg = exp.train
    loss_rows = []
    for step in range(cfg.steps):
        samples = [prepare_sample(exp, step_seed(exp.seed, step, b),
                                  rng_for("aug", exp.seed, step, b), training=True)
                   for b in range(cfg.batch_size)]
        lr = lr_at(cfg, step)
        value = train_step(model, adam, stack_batch(samples), cfg, lr,
                           out_dir=out_dir, step=step)
        loss_rows.append((step, lr, value))

    records, aggregate = metrics_mod.evaluate_model(model, exp)
    result = ExperimentResult(model=model, records=records, aggregate=aggregate,
                              loss_rows=loss_rows, wall_time_s=time.time() - start)
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        model.save(os.path.join(out_dir, "checkpoint.dcw1"))
        write_csv(os.path.join(out_dir, "loss.csv"), ["step", "lr", "loss"], loss_rows)
        metrics_mod.write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                                      exp.name, records, exp.eval_cfg.caps_m)
    return result
