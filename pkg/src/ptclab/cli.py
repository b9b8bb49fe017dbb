"""Experiment harness CLI.

Commands: gen-data (export bundles), train, eval, demo-ptc (the six-cell
collapse matrix), ablate (the three ablation suites). Every command honors
--seed (env PTCLAB_SEED as fallback) and is deterministic given it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import experiments as exp_mod
from . import metrics as metrics_mod
from .errors import ConfigurationError, TrainAbort, UsageError
from .fileio import write_csv, write_dcr1
from .seeding import rng_for
from .simsensor import generate_bundle
from .train import run_experiment


def resolve_seed(flag_value, fallback: int) -> int:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get("PTCLAB_SEED")
    if env is not None:
        return int(env)
    return int(fallback)


def _load_config(path, seed_flag):
    cfg = config_mod.load_config(path)
    cfg.seed = resolve_seed(seed_flag, cfg.seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n):
        scene_seed = int(rng_for("gendata", cfg.seed, i).integers(0, 2 ** 62))
        bundle = generate_bundle(scene_seed, cfg.sim)
        bdir = os.path.join(args.out, f"bundle_{i:04d}")
        os.makedirs(bdir, exist_ok=True)
        write_dcr1(os.path.join(bdir, "image.dcr1"), bundle.image)
        write_dcr1(os.path.join(bdir, "lidar.dcr1"), bundle.lidar)
        write_dcr1(os.path.join(bdir, "radar_raster.dcr1"), bundle.radar_raster)
        write_dcr1(os.path.join(bdir, "mask.dcr1"), bundle.mask)
        write_dcr1(os.path.join(bdir, "dense_gt.dcr1"), bundle.dense_gt)
        k = bundle.intrinsics
        sidecar = {
            "scene_seed": scene_seed,
            "n_radar_points": int(len(bundle.radar_points)),
            "radar_points": [[float(v) for v in p] for p in bundle.radar_points],
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                           "width": k.width, "height": k.height},
        }
        with open(os.path.join(bdir, "sidecar.json"), "w", encoding="utf-8",
                  newline="\n") as f:
            json.dump(sidecar, f, sort_keys=True, indent=1)
            f.write("\n")
    print(f"wrote {args.n} bundles to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    run_experiment(cfg, out_dir=args.out)
    print(f"trained {cfg.name!r}: checkpoint.dcw1, loss.csv, metrics.csv in {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.seed)
    _, agg = metrics_mod.evaluate(args.checkpoint, cfg, out_dir=args.out)
    mae80 = agg["per_cap"][max(cfg.eval_cfg.caps_m)][0]
    print(f"evaluated {cfg.name!r}: mae@{max(cfg.eval_cfg.caps_m):.0f}m "
          f"{mae80:.1f} mm, artifact_ratio {agg['artifact_ratio']:.3f}")
    return 0


def cmd_demo_ptc(args) -> int:
    seed = resolve_seed(args.seed, 0)
    cells = exp_mod.demo_cells(seed, steps=args.steps, bench=args.bench)
    os.makedirs(args.out, exist_ok=True)
    results = exp_mod.run_cells(cells, jobs=args.jobs, out_root=args.out)
    rows = exp_mod.summary_rows(cells, results)
    write_csv(os.path.join(args.out, "summary.csv"), exp_mod.SUMMARY_COLUMNS, rows)
    for row in rows:
        print(f"{row[0]:>28}: artifact_ratio {row[1]:.3f}  stripe {row[2]:+.3f}  "
              f"mae {row[3]:.0f} mm")
    print(f"summary.csv in {args.out}")
    return 0


_SUITES = ("disruption", "compensation", "supervision")


def cmd_ablate(args) -> int:
    seed = resolve_seed(args.seed, 0)
    os.makedirs(args.out, exist_ok=True)
    builders = {
        "disruption": (exp_mod.disruption_cells, exp_mod.DISRUPTION_ROWS),
        "compensation": (exp_mod.compensation_cells, exp_mod.COMPENSATION_ROWS),
        "supervision": (exp_mod.supervision_cells, exp_mod.SUPERVISION_ROWS),
    }
    for suite in args.suites:
        build, row_names = builders[suite]
        cells = build(seed, steps=args.steps, bench=args.bench)
        out_root = os.path.join(args.out, suite) if args.keep_cells else None
        results = exp_mod.run_cells(cells, jobs=args.jobs, out_root=out_root)
        rows = exp_mod.table_rows(row_names, results)
        path = os.path.join(args.out, f"table_{suite}.csv")
        write_csv(path, exp_mod.TABLE_COLUMNS, rows)
        for row in rows:
            print(f"{suite}/{row[0]:>24}: mae mean {row[4]:.0f} mm")
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptclab",
        description="Synthetic radar-camera depth completion lab: reproduce "
                    "and cure scanline-collapse under sparse supervision.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="export SampleBundles as DCR1 + sidecars")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the fixed benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-ptc", help="run the six-cell collapse/cure matrix")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--steps", type=int, default=None, help="override training steps")
    p.add_argument("--bench", type=int, default=None, help="override benchmark scenes")
    p.set_defaults(func=cmd_demo_ptc)

    p = sub.add_parser("ablate", help="run the ablation suites")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--bench", type=int, default=None)
    p.add_argument("--suites", nargs="+", choices=_SUITES, default=list(_SUITES))
    p.add_argument("--keep-cells", action="store_true",
                   help="also write per-cell checkpoints and metrics")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
