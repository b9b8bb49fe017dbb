"""Preset experiment matrices: the six-cell collapse demo and the three
ablation suites. Cells are pure functions of their configs, so they can run
in parallel worker processes without affecting results."""

from __future__ import annotations

import copy
import os

import numpy as np

from . import config as config_mod
from .train import run_experiment

DEMO_CELLS = (
    "mono_sparse_no_disruption",
    "mono_sparse_2d_disruption",
    "rc_no_disruption",
    "rc_2d_only",
    "rc_2d_lift",
    "rc_2d_random_height",
)

COMPENSATION_ROWS = ("disruption_only", "injection", "injection_mask")
SUPERVISION_ROWS = ("accumulated_dense", "interpolated_dense", "sparse_disruption")
DISRUPTION_ROWS = ("mono", "radar_camera", "radar_camera_disrupt",
                   "sparse_lidar", "sparse_lidar_disrupt")


def _overrides(data: dict, steps=None, bench=None) -> dict:
    data = copy.deepcopy(data)
    if steps is not None:
        data["train"]["steps"] = int(steps)
    if bench is not None:
        data.setdefault("eval_cfg", {})["benchmark_scenes"] = int(bench)
    return data


def demo_cells(base_seed: int, steps=None, bench=None):
    cells = []
    for name in DEMO_CELLS:
        data = _overrides(config_mod.PRESETS[name], steps, bench)
        data["seed"] = int(base_seed)
        cells.append((name, data))
    return cells


def compensation_cells(base_seed: int, steps=None, bench=None):
    """Table-4 analogue: full disruption, compensation heads added one by one."""
    cells = []
    for row, use_inj, use_mask in (("disruption_only", False, False),
                                   ("injection", True, False),
                                   ("injection_mask", True, True)):
        for offset in range(3):
            data = _overrides(config_mod.PRESETS["full_framework"], steps, bench)
            data["seed"] = int(base_seed) + offset
            data["name"] = f"{row}_s{offset}"
            data["network"]["use_injection"] = use_inj
            data["network"]["use_mask_decoder"] = use_mask
            cells.append((data["name"], data))
    return cells


def supervision_cells(base_seed: int, steps=None, bench=None):
    """Table-5 analogue: identical scenes (one moving object), supervision
    source swapped between accumulated, interpolated and sparse."""
    modes = {"accumulated_dense": "noisy_dense_accumulated",
             "interpolated_dense": "interpolated_dense",
             "sparse_disruption": "sparse_single_frame"}
    cells = []
    for row, mode in modes.items():
        for offset in range(3):
            data = _overrides(config_mod.PRESETS["full_framework"], steps, bench)
            data["seed"] = int(base_seed) + offset
            data["name"] = f"{row}_s{offset}"
            data["sim"]["scene"] = {"n_moving": 1}
            data["train"]["supervision"] = mode
            cells.append((data["name"], data))
    return cells


def disruption_cells(base_seed: int, steps=None, bench=None):
    """Table-3 analogue: input swaps with and without the disruption."""
    plans = {
        "mono": ("mono_sparse_no_disruption", {}),
        "radar_camera": ("rc_no_disruption", {}),
        "radar_camera_disrupt": ("rc_2d_lift", {}),
        "sparse_lidar": ("rc_no_disruption", {"depth_input": "sparse_lidar"}),
        "sparse_lidar_disrupt": ("rc_2d_only", {"depth_input": "sparse_lidar"}),
    }
    cells = []
    for row, (preset_name, net_over) in plans.items():
        for offset in range(3):
            data = _overrides(config_mod.PRESETS[preset_name], steps, bench)
            data["seed"] = int(base_seed) + offset
            data["name"] = f"{row}_s{offset}"
            data["network"].update(net_over)
            cells.append((data["name"], data))
    return cells


def _run_cell(task):
    name, data, out_dir = task
    try:
        from threadpoolctl import threadpool_limits
        limit = threadpool_limits(limits=int(os.environ.get("PTCLAB_BLAS_THREADS", "0"))
                                  or None)
    except Exception:
        limit = None
    exp = config_mod.from_dict(data)
    result = run_experiment(exp, out_dir=out_dir)
    if out_dir is not None:
        from .metrics import render_benchmark_images
        render_benchmark_images(result.model, exp, out_dir, count=4)
    if limit is not None:
        limit.restore_original_limits()
    return name, result.aggregate, result.wall_time_s


def run_cells(cells, jobs: int = 1, out_root=None) -> dict:
    """Run (name, config-dict) cells, each into out_root/<name> when given;
    returns name -> aggregate metrics."""
    tasks = []
    for name, data in cells:
        out_dir = os.path.join(out_root, name) if out_root else None
        tasks.append((name, data, out_dir))
    results = {}
    timings = {}
    if jobs <= 1:
        for task in tasks:
            name, agg, wall = _run_cell(task)
            results[name] = agg
            timings[name] = wall
    else:
        import multiprocessing as mp
        os.environ.setdefault("PTCLAB_BLAS_THREADS", "1")
        with mp.get_context("fork").Pool(processes=jobs) as pool:
            for name, agg, wall in pool.map(_run_cell, tasks, chunksize=1):
                results[name] = agg
                timings[name] = wall
        os.environ.pop("PTCLAB_BLAS_THREADS", None)
    results["_wall_time_s"] = timings
    return results


def summary_rows(cells, results):
    rows = []
    for name, _ in cells:
        agg = results[name]
        rows.append([name, agg["artifact_ratio"], agg["stripe_score"],
                     agg["mae_inrange_mm"], agg["rmse_inrange_mm"],
                     agg["mae_on_mm"], agg["mae_off_mm"]])
    return rows


def table_rows(row_names, results):
    """Seed-wise in-range MAE/RMSE plus means, one row per ablation variant.

    In-range = pixels with a surface return inside the range cap; pixels at
    the cap are never supervised by any mode and would dilute every cell
    identically.
    """
    rows = []
    for row in row_names:
        maes, rmses = [], []
        for offset in range(3):
            agg = results[f"{row}_s{offset}"]
            maes.append(agg["mae_inrange_mm"])
            rmses.append(agg["rmse_inrange_mm"])
        rows.append([row] + maes + [float(np.mean(maes))] +
                    rmses + [float(np.mean(rmses))])
    return rows


SUMMARY_COLUMNS = ["cell", "artifact_ratio", "stripe_score", "mae_mm",
                   "rmse_mm", "mae_on_mm", "mae_off_mm"]
TABLE_COLUMNS = ["row", "mae_mm_s0", "mae_mm_s1", "mae_mm_s2", "mae_mm_mean",
                 "rmse_mm_s0", "rmse_mm_s1", "rmse_mm_s2", "rmse_mm_mean"]
