"""Error metrics, range-capped evaluation, and scan-pattern diagnostics.

MAE/RMSE are computed in millimeters over the valid-GT pixel set per range
cap. The on/off-support split measures error at vs away from the LiDAR
scanline pattern against the synthetic dense ground truth, a measurement
the real benchmark cannot make; artifact_ratio = (off + eps)/(on + eps)
and the stripe score correlate error with distance from the scanlines.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import UsageError
from .fileio import write_csv, write_pgm, write_ppm
from .seeding import rng_for

ARTIFACT_EPS_MM = 1.0

METRICS_COLUMNS = ["experiment", "seed", "cap_m", "mae_mm", "rmse_mm",
                   "mae_on_mm", "mae_off_mm", "artifact_ratio", "stripe_score"]


@dataclass
class EvalConfig:
    benchmark_scenes: int = 64
    benchmark_seed: int = 777000
    caps_m: tuple = (50.0, 70.0, 80.0)

    def __post_init__(self):
        self.caps_m = tuple(float(c) for c in self.caps_m)


@dataclass
class MetricsRecord:
    scene_seed: int
    per_cap: dict                    # cap -> (mae_mm, rmse_mm, n_pixels)
    mae_on_mm: float
    mae_off_mm: float
    artifact_ratio: float
    stripe_score: float
    n_on: int = 0
    n_off: int = 0
    mae_inrange_mm: float = float("nan")   # over pixels with a return in range
    rmse_inrange_mm: float = float("nan")


def mae_rmse(pred: np.ndarray, gt: np.ndarray, cap: float):
    """(mae_mm, rmse_mm, n) over valid-GT pixels with gt <= cap; an empty
    set yields NaN sentinels, never zero."""
    if pred.shape != gt.shape:
        raise UsageError(f"extent mismatch: pred {pred.shape} vs gt {gt.shape}")
    omega = (gt > 0) & (gt <= cap)
    n = int(omega.sum())
    if n == 0:
        return float("nan"), float("nan"), 0
    err = np.abs(pred[omega].astype(np.float64) - gt[omega].astype(np.float64))
    mae = float(err.mean()) * 1000.0
    rmse = float(np.sqrt((err * err).mean())) * 1000.0
    return mae, rmse, n


def support_split_mae(pred: np.ndarray, dense_gt: np.ndarray, support: np.ndarray,
                      cap: float, within: np.ndarray = None):
    """MAE (mm) on vs off the support pixels, plus the artifact ratio.

    `within` optionally restricts the domain (evaluation uses it to drop
    pixels whose dense GT sits at the range cap, i.e. no return in range).
    """
    if pred.shape != dense_gt.shape or pred.shape != support.shape:
        raise UsageError("support_split extents differ")
    omega = (dense_gt > 0) & (dense_gt <= cap)
    if within is not None:
        omega &= within
    support = support.astype(bool)
    on = omega & support
    off = omega & ~support
    if not on.any():
        raise UsageError("empty on-support set")
    err = np.abs(pred.astype(np.float64) - dense_gt.astype(np.float64)) * 1000.0
    mae_on = float(err[on].mean())
    mae_off = float(err[off].mean()) if off.any() else 0.0
    ratio = (mae_off + ARTIFACT_EPS_MM) / (mae_on + ARTIFACT_EPS_MM)
    return mae_on, mae_off, ratio, int(on.sum()), int(off.sum())


def stripe_score(error_map: np.ndarray, support: np.ndarray,
                 within: np.ndarray = None) -> float:
    """Correlation between |error| and distance to the nearest support
    pixel; high when error grows away from the scanlines."""
    support = support.astype(bool)
    if not support.any():
        return 0.0
    dist = ndimage.distance_transform_edt(~support)
    err = np.abs(error_map).astype(np.float64)
    if within is not None:
        err = err[within]
        dist = dist[within]
    else:
        err = err.ravel()
        dist = dist.ravel()
    if err.size < 2 or err.std() == 0.0 or dist.std() == 0.0:
        return 0.0
    return float(np.corrcoef(err, dist)[0, 1])


# ---------------------------------------------------------------------------
# benchmark evaluation


def benchmark_seeds(eval_cfg: EvalConfig):
    rng = rng_for("bench", eval_cfg.benchmark_seed)
    return [int(s) for s in rng.integers(0, 2 ** 62, size=eval_cfg.benchmark_scenes)]


def evaluate_model(model, exp):
    """Per-scene MetricsRecords plus their aggregate on the fixed benchmark."""
    from .train import prepare_sample, stack_batch

    max_range = exp.sim.max_range
    seeds = benchmark_seeds(exp.eval_cfg)
    records = []
    preds = {}
    samples = {}
    chunk = 8
    for at in range(0, len(seeds), chunk):
        part = seeds[at:at + chunk]
        prepared = [prepare_sample(exp, s, None, training=False) for s in part]
        image, depth_in, points, _, _ = stack_batch(prepared)
        out = model.forward(image, depth_in,
                            points if model.cfg.use_injection else None)
        for i, seed in enumerate(part):
            preds[seed] = out.depth[0].data[i, 0].astype(np.float32)
            samples[seed] = prepared[i]

    for seed in seeds:
        pred = preds[seed]
        sample = samples[seed]
        dense = sample.dense_gt
        support = sample.lidar_support
        in_range = dense < max_range      # pixels with a real return in range
        per_cap = {cap: mae_rmse(pred, dense, cap) for cap in exp.eval_cfg.caps_m}
        mae_in, rmse_in, _ = mae_rmse(pred, np.where(in_range, dense, 0.0), max_range)
        mae_on, mae_off, ratio, n_on, n_off = support_split_mae(
            pred, dense, support, max_range, within=in_range)
        stripe = stripe_score(pred - dense, support, within=in_range)
        records.append(MetricsRecord(scene_seed=seed, per_cap=per_cap,
                                     mae_on_mm=mae_on, mae_off_mm=mae_off,
                                     artifact_ratio=ratio, stripe_score=stripe,
                                     n_on=n_on, n_off=n_off,
                                     mae_inrange_mm=mae_in, rmse_inrange_mm=rmse_in))
    return records, aggregate_records(records, exp.eval_cfg.caps_m)


def aggregate_records(records, caps) -> dict:
    agg = {"per_cap": {}}
    for cap in caps:
        maes = [r.per_cap[cap][0] for r in records if r.per_cap[cap][2] > 0]
        rmses = [r.per_cap[cap][1] for r in records if r.per_cap[cap][2] > 0]
        ns = [r.per_cap[cap][2] for r in records]
        agg["per_cap"][cap] = (float(np.mean(maes)) if maes else float("nan"),
                               float(np.mean(rmses)) if rmses else float("nan"),
                               int(np.sum(ns)))
    agg["mae_on_mm"] = float(np.mean([r.mae_on_mm for r in records]))
    agg["mae_off_mm"] = float(np.mean([r.mae_off_mm for r in records]))
    agg["artifact_ratio"] = float(np.mean([r.artifact_ratio for r in records]))
    agg["stripe_score"] = float(np.mean([r.stripe_score for r in records]))
    agg["mae_inrange_mm"] = float(np.mean([r.mae_inrange_mm for r in records]))
    agg["rmse_inrange_mm"] = float(np.mean([r.rmse_inrange_mm for r in records]))
    return agg


def write_metrics_csv(path, experiment: str, records, caps) -> None:
    rows = []
    for r in records:
        for cap in caps:
            mae, rmse, _ = r.per_cap[cap]
            rows.append([experiment, r.scene_seed, cap, mae, rmse,
                         r.mae_on_mm, r.mae_off_mm, r.artifact_ratio, r.stripe_score])
    for cap in caps:
        scene_rows = [row for row in rows if row[2] == cap and row[1] != "mean"]
        rows.append([experiment, "mean", cap,
                     float(np.mean([row[3] for row in scene_rows])),
                     float(np.mean([row[4] for row in scene_rows])),
                     float(np.mean([row[5] for row in scene_rows])),
                     float(np.mean([row[6] for row in scene_rows])),
                     float(np.mean([row[7] for row in scene_rows])),
                     float(np.mean([row[8] for row in scene_rows]))])
    write_csv(path, METRICS_COLUMNS, rows)


def render_benchmark_images(model, exp, out_dir, count: int = 4) -> None:
    """Predicted-depth PGM/PPM for the first benchmark scenes."""
    from .train import prepare_sample, stack_batch

    os.makedirs(out_dir, exist_ok=True)
    seeds = benchmark_seeds(exp.eval_cfg)[:count]
    prepared = [prepare_sample(exp, s, None, training=False) for s in seeds]
    image, depth_in, points, _, _ = stack_batch(prepared)
    out = model.forward(image, depth_in, points if model.cfg.use_injection else None)
    for i in range(len(seeds)):
        pred = out.depth[0].data[i, 0]
        write_pgm(os.path.join(out_dir, f"pred_{i:03d}.pgm"), pred, exp.sim.max_range)
        write_ppm(os.path.join(out_dir, f"pred_{i:03d}.ppm"), pred, exp.sim.max_range)
        write_pgm(os.path.join(out_dir, f"gt_{i:03d}.pgm"),
                  prepared[i].dense_gt, exp.sim.max_range)
        write_ppm(os.path.join(out_dir, f"gt_{i:03d}.ppm"),
                  prepared[i].dense_gt, exp.sim.max_range)


def evaluate(checkpoint_path, exp, out_dir=None):
    """Load a checkpoint, run the benchmark, optionally emit CSV + images."""
    from .model import DepthNet

    if not os.path.exists(checkpoint_path):
        raise UsageError(f"missing checkpoint: {checkpoint_path}")
    model = DepthNet.load(checkpoint_path, exp.network)
    records, agg = evaluate_model(model, exp)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                          exp.name, records, exp.eval_cfg.caps_m)
        seeds = benchmark_seeds(exp.eval_cfg)
        from .train import prepare_sample, stack_batch
        chunk = 8
        index = 0
        for at in range(0, len(seeds), chunk):
            part = seeds[at:at + chunk]
            prepared = [prepare_sample(exp, s, None, training=False) for s in part]
            image, depth_in, points, _, _ = stack_batch(prepared)
            out = model.forward(image, depth_in,
                                points if model.cfg.use_injection else None)
            for i in range(len(part)):
                pred = out.depth[0].data[i, 0]
                write_pgm(os.path.join(out_dir, f"pred_{index:03d}.pgm"),
                          pred, exp.sim.max_range)
                write_ppm(os.path.join(out_dir, f"pred_{index:03d}.ppm"),
                          pred, exp.sim.max_range)
                index += 1
    return records, agg
