"""Experiment configuration: strict JSON round-trip plus the frozen presets.

Unknown keys are rejected with the offending path so a typo in an ablation
flag cannot silently invalidate an experiment.
"""

from __future__ import annotations

import copy
import dataclasses
import json

from .disruption import DisruptionConfig
from .errors import ConfigurationError
from .metrics import EvalConfig
from .model import NetworkConfig
from .simsensor import RadarConfig, SceneConfig, SimConfig
from .train import TrainConfig


@dataclasses.dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    disruption: DisruptionConfig = dataclasses.field(default_factory=DisruptionConfig)
    network: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    eval_cfg: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    output_dir: str = ""


_NESTED = {
    ExperimentConfig: {"sim": SimConfig, "disruption": DisruptionConfig,
                       "network": NetworkConfig, "train": TrainConfig,
                       "eval_cfg": EvalConfig},
    SimConfig: {"radar": RadarConfig, "scene": SceneConfig},
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"config section {path or cls.__name__} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigurationError(f"unknown config key: {where}")
    kwargs = {}
    nested = _NESTED.get(cls, {})
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key in nested:
            kwargs[key] = _build(nested[key], value, sub)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid config section {path or 'root'}: {exc}")


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def to_dict(cfg: ExperimentConfig) -> dict:
    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})")
    return from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(to_dict(cfg), f, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# presets: desk-scale experiment cells (pilot-calibrated, then frozen)

_CELL_SIM = {
    "height": 48, "width": 64,
}

_CELL_RADAR = {
    "elevation_mode": "fixed",
    "max_depth": 25.0,
}

_CELL_NET_SMALL = {
    "encoder_channels": [8, 16, 32],
    "decoder_channels": [16, 8, 1],
    "mask_decoder_channels": [8, 8, 1],
}

_CELL_TRAIN = {
    "steps": 500, "batch_size": 8, "lr": 2e-3, "schedule": "cosine",
}


def _cell(name, *, depth_input, enable_2d, enable_3d=False, mode_3d="lift",
          use_injection=False, use_mask_decoder=False, radar_overrides=None,
          train_overrides=None, scene_overrides=None):
    sim = dict(_CELL_SIM)
    sim["radar"] = dict(_CELL_RADAR, **(radar_overrides or {}))
    if scene_overrides:
        sim["scene"] = dict(scene_overrides)
    net = dict(_CELL_NET_SMALL)
    net["depth_input"] = depth_input
    net["input_channels"] = 1 + (depth_input != "none")
    net["use_injection"] = use_injection
    net["use_mask_decoder"] = use_mask_decoder
    return {
        "name": name,
        "seed": 0,
        "sim": sim,
        "disruption": {"enable_2d": enable_2d, "enable_3d": enable_3d,
                       "mode_3d": mode_3d},
        "network": net,
        "train": dict(_CELL_TRAIN, **(train_overrides or {})),
        "eval_cfg": {},
    }


PRESETS = {
    "mono_sparse_no_disruption": _cell(
        "mono_sparse_no_disruption", depth_input="none", enable_2d=False),
    "mono_sparse_2d_disruption": _cell(
        "mono_sparse_2d_disruption", depth_input="none", enable_2d=True),
    "rc_no_disruption": _cell(
        "rc_no_disruption", depth_input="radar", enable_2d=False),
    "rc_2d_only": _cell(
        "rc_2d_only", depth_input="radar", enable_2d=True),
    "rc_2d_lift": _cell(
        "rc_2d_lift", depth_input="radar", enable_2d=True, enable_3d=True,
        mode_3d="lift"),
    "rc_2d_random_height": _cell(
        "rc_2d_random_height", depth_input="radar", enable_2d=True, enable_3d=True,
        mode_3d="random_height"),
    "full_framework": _cell(
        "full_framework", depth_input="radar", enable_2d=True, enable_3d=True,
        mode_3d="lift", use_injection=True, use_mask_decoder=True),
}

# The paper-scale topology and schedule, recorded for reference and the
# parameter-count self-check; not a runnable desk preset.
PAPER_SCALE_NOTES = {
    "network": {
        "encoder_channels": [512, 256, 128, 64, 16],
        "decoder_channels": [64, 16, 8, 8, 1],
        "injection_channels": [32, 64, 96, 64, 32, 8],
        "pyramid_scales": [1.0, 0.5, 0.25],
    },
    "train": {"lr": 7e-3, "schedule": "cosine", "epochs": 400, "batch_size": 32,
              "lambda1": 1.0, "lambda2": 0.5, "lambda3": 0.25, "hflip_prob": 0.5},
    "raster": [900, 1600],
}


def preset(name: str, seed: int = None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; "
                                 f"available: {sorted(PRESETS)}")
    data = copy.deepcopy(PRESETS[name])
    if seed is not None:
        data["seed"] = int(seed)
    return from_dict(data)
