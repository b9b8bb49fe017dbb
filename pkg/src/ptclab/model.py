"""Depth-completion network with configurable scale and compensation heads.

One shared encoder-decoder trunk fed the scale-1 input, depth heads at up
to three decoder resolutions, a permutation-invariant point-injection MLP
fused at the bottleneck, and a detachable mask-decoder branch that reads
encoder features but never writes them (so depth output is bitwise
independent of its presence).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .fileio import read_dcw1, write_dcw1

_SCALE_TAGS = {1.0: "1", 0.5: "2", 0.25: "4"}


@dataclass
class NetworkConfig:
    encoder_channels: tuple = (16, 32, 64)
    decoder_channels: tuple = (32, 16, 1)
    mask_decoder_channels: tuple = (16, 8, 1)
    injection_channels: tuple = (32, 64, 96, 64, 32, 8)
    pyramid_scales: tuple = (1.0, 0.5, 0.25)
    input_channels: int = 2
    depth_input: str = "radar"     # radar | sparse_lidar | none
    use_injection: bool = True
    use_mask_decoder: bool = True
    max_range: float = 80.0

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        self.decoder_channels = tuple(self.decoder_channels)
        self.mask_decoder_channels = tuple(self.mask_decoder_channels)
        self.injection_channels = tuple(self.injection_channels)
        self.pyramid_scales = tuple(float(s) for s in self.pyramid_scales)
        if len(self.encoder_channels) < 2:
            raise ConfigurationError("need at least 2 encoder levels")
        if len(self.decoder_channels) != len(self.encoder_channels):
            raise ConfigurationError(
                "decoder_channels must have one entry per encoder level "
                f"(ups + head): {self.decoder_channels} vs {self.encoder_channels}")
        if self.decoder_channels[-1] != 1:
            raise ConfigurationError("decoder must end in 1 channel")
        if self.use_mask_decoder:
            if len(self.mask_decoder_channels) != len(self.encoder_channels):
                raise ConfigurationError("mask decoder depth must match encoder")
            if self.mask_decoder_channels[-1] != 1:
                raise ConfigurationError("mask decoder must end in 1 channel")
        if not set(self.pyramid_scales) <= {1.0, 0.5, 0.25}:
            raise ConfigurationError(f"pyramid_scales must be within {{1, 1/2, 1/4}}, "
                                     f"got {self.pyramid_scales}")
        if self.pyramid_scales[0] != 1.0:
            raise ConfigurationError("pyramid_scales must start with the full scale")
        bottleneck_scale = 0.5 ** (len(self.encoder_channels) - 1)
        if min(self.pyramid_scales) < bottleneck_scale:
            raise ConfigurationError("pyramid scale finer than the bottleneck")
        if self.depth_input not in ("radar", "sparse_lidar", "none"):
            raise ConfigurationError(f"unknown depth_input {self.depth_input!r}")
        expected = 1 + (self.depth_input != "none")
        if self.input_channels != expected:
            raise ConfigurationError(
                f"input_channels={self.input_channels} inconsistent with "
                f"depth_input={self.depth_input!r} (expected {expected})")


@dataclass
class ModelOutput:
    depth: list                      # Tensor per pyramid scale, full first
    scales: tuple
    mask_logits: object = None       # Tensor when the mask decoder ran
    injection: object = None         # Tensor (N, C) when injection ran


def _up_channel_plan(cfg: NetworkConfig, channels: tuple):
    """Input/output channels of each decoder up level (shared topology)."""
    enc = cfg.encoder_channels
    levels = []
    prev = enc[-1]
    for j, out_ch in enumerate(channels[:-1]):
        skip = enc[len(enc) - 2 - j]
        levels.append((prev + skip, out_ch))
        prev = out_ch
    return levels


def _head_feature_channels(cfg: NetworkConfig) -> dict:
    """Channel count of the trunk feature each pyramid head reads."""
    enc = cfg.encoder_channels
    ups = cfg.decoder_channels[:-1]
    n_levels = len(enc) - 1
    out = {}
    for s in cfg.pyramid_scales:
        # the up level whose output sits at resolution s; bottleneck when none
        index = n_levels - 1 - int(round(np.log2(1.0 / s)))
        out[s] = ups[index] if index >= 0 else enc[-1]
    return out


def parameter_count(cfg: NetworkConfig) -> int:
    """Closed-form count from the channel lists (convs carry no bias)."""
    enc = cfg.encoder_channels
    total = 0
    prev = cfg.input_channels
    for ch in enc:
        total += ch * prev * 9
        prev = ch
    if cfg.use_injection:
        prev = 3
        for ch in cfg.injection_channels:
            total += ch * prev + ch
            prev = ch
        total += enc[-1] * (enc[-1] + cfg.injection_channels[-1])  # 1x1 mix
    for in_ch, out_ch in _up_channel_plan(cfg, cfg.decoder_channels):
        total += out_ch * in_ch * 9
    for s, feat in _head_feature_channels(cfg).items():
        total += cfg.decoder_channels[-1] * feat * 9
    if cfg.use_mask_decoder:
        for in_ch, out_ch in _up_channel_plan(cfg, cfg.mask_decoder_channels):
            total += out_ch * in_ch * 9
        total += cfg.mask_decoder_channels[-1] * cfg.mask_decoder_channels[-2] * 9
    return total


class DepthNet:
    """Parameters live in a name -> Tensor dict in fixed declaration order."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = {}
        enc = cfg.encoder_channels

        def conv_param(name, out_ch, in_ch, kh=3, kw=3):
            std = np.sqrt(2.0 / (in_ch * kh * kw))
            self.params[name] = T.parameter(rng.normal(0.0, std, size=(out_ch, in_ch, kh, kw)))

        prev = cfg.input_channels
        for i, ch in enumerate(enc):
            conv_param(f"enc{i}.w", ch, prev)
            prev = ch
        if cfg.use_injection:
            prev = 3
            for i, ch in enumerate(cfg.injection_channels):
                std = np.sqrt(2.0 / prev)
                self.params[f"inj{i}.w"] = T.parameter(rng.normal(0.0, std, size=(ch, prev)))
                self.params[f"inj{i}.b"] = T.parameter(np.zeros(ch))
                prev = ch
            conv_param("mix.w", enc[-1], enc[-1] + cfg.injection_channels[-1], 1, 1)
        for j, (in_ch, out_ch) in enumerate(_up_channel_plan(cfg, cfg.decoder_channels)):
            conv_param(f"dec{j}.w", out_ch, in_ch)
        for s, feat in _head_feature_channels(cfg).items():
            conv_param(f"head{_SCALE_TAGS[s]}.w", cfg.decoder_channels[-1], feat)
        if cfg.use_mask_decoder:
            for j, (in_ch, out_ch) in enumerate(_up_channel_plan(cfg, cfg.mask_decoder_channels)):
                conv_param(f"mask{j}.w", out_ch, in_ch)
            conv_param("mask_head.w", cfg.mask_decoder_channels[-1],
                       cfg.mask_decoder_channels[-2])

    # -- injection ---------------------------------------------------------

    def inject_batch(self, points_list) -> T.Tensor:
        """Per-point MLP, mean-pooled per sample; empty set -> zero vector."""
        cfg = self.cfg
        n = len(points_list)
        counts = [np.asarray(p).reshape(-1, 3).shape[0] for p in points_list]
        total = int(sum(counts))
        if total:
            stacked = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1, 3)
                                      for p in points_list], axis=0)
        else:
            stacked = np.zeros((0, 3))
        feats = T.as_tensor(stacked / cfg.max_range)
        for i in range(len(cfg.injection_channels)):
            feats = T.linear(feats, self.params[f"inj{i}.w"], self.params[f"inj{i}.b"])
            if i + 1 < len(cfg.injection_channels):
                feats = T.relu(feats)
        pool = np.zeros((n, total), dtype=np.float64)
        at = 0
        for row, c in enumerate(counts):
            if c:
                pool[row, at:at + c] = 1.0 / c
            at += c
        return T.matmul_const(pool, feats)

    def inject(self, points) -> np.ndarray:
        """Single point set -> injection feature vector."""
        return self.inject_batch([points]).data[0]

    # -- forward -----------------------------------------------------------

    def forward(self, image: np.ndarray, depth_raster=None, points_list=None) -> ModelOutput:
        """image (N,H,W) in [0,1]; depth_raster (N,H,W) meters or None;
        points_list one (n_i, 3) array per sample when injection is on."""
        cfg = self.cfg
        image = np.asarray(image)
        if image.ndim == 2:
            image = image[None]
        n, h, w = image.shape
        stride_total = 2 ** (len(cfg.encoder_channels) - 1)
        if h % stride_total or w % stride_total:
            raise ConfigurationError(
                f"raster {h}x{w} not divisible by encoder stride {stride_total}")
        channels = [image[:, None, :, :]]
        if cfg.depth_input != "none":
            if depth_raster is None:
                raise UsageError(f"depth_input={cfg.depth_input!r} needs a depth raster")
            depth_raster = np.asarray(depth_raster)
            if depth_raster.ndim == 2:
                depth_raster = depth_raster[None]
            channels.append(depth_raster[:, None, :, :] / cfg.max_range)
        x = T.as_tensor(np.concatenate(channels, axis=1))

        feats = []
        hcur = x
        for i in range(len(cfg.encoder_channels)):
            hcur = T.relu(T.conv2d(hcur, self.params[f"enc{i}.w"],
                                   stride=1 if i == 0 else 2))
            feats.append(hcur)

        bottom = feats[-1]
        injection = None
        if cfg.use_injection:
            if points_list is None:
                points_list = [np.zeros((0, 3))] * n
            injection = self.inject_batch(points_list)
            fmap = T.broadcast_hw(injection, bottom.shape[2], bottom.shape[3])
            bottom = T.relu(T.conv2d(T.concat_channels([bottom, fmap]),
                                     self.params["mix.w"]))

        ups = []
        hcur = bottom
        for j in range(len(cfg.encoder_channels) - 1):
            skip = feats[len(feats) - 2 - j]
            hcur = T.relu(T.conv2d(T.concat_channels([T.up2(hcur), skip]),
                                   self.params[f"dec{j}.w"]))
            ups.append(hcur)

        n_levels = len(cfg.encoder_channels) - 1
        depth_preds = []
        for s in cfg.pyramid_scales:
            index = n_levels - 1 - int(round(np.log2(1.0 / s)))
            feat = ups[index] if index >= 0 else bottom
            logit = T.conv2d(feat, self.params[f"head{_SCALE_TAGS[s]}.w"])
            depth_preds.append(T.mul(T.sigmoid(logit), cfg.max_range))

        mask_logits = None
        if cfg.use_mask_decoder:
            mcur = bottom
            for j in range(len(cfg.encoder_channels) - 1):
                skip = feats[len(feats) - 2 - j]
                mcur = T.relu(T.conv2d(T.concat_channels([T.up2(mcur), skip]),
                                       self.params[f"mask{j}.w"]))
            mask_logits = T.conv2d(mcur, self.params["mask_head.w"])

        return ModelOutput(depth=depth_preds, scales=cfg.pyramid_scales,
                           mask_logits=mask_logits, injection=injection)

    def predict_mask(self, output: ModelOutput) -> np.ndarray:
        """sigmoid(logits) thresholded strictly above 0.5."""
        if output.mask_logits is None:
            raise UsageError("mask decoder is disabled on this model")
        prob = 1.0 / (1.0 + np.exp(-output.mask_logits.data.astype(np.float64)))
        return (prob > 0.5).astype(np.float32)[:, 0]

    # -- parameters --------------------------------------------------------

    def named_arrays(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def parameter_total(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def save(self, path) -> None:
        write_dcw1(path, {name: p.data.astype(np.float32)
                          for name, p in self.params.items()})

    def load_arrays(self, arrays: dict) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise UsageError(f"checkpoint is missing parameter {name!r}")
            if tuple(arrays[name].shape) != tuple(p.data.shape):
                raise UsageError(
                    f"checkpoint/config mismatch on {name!r}: "
                    f"{arrays[name].shape} vs {p.data.shape}")
            p.data = arrays[name].astype(p.data.dtype)
        extra = set(arrays) - set(self.params)
        if extra:
            raise UsageError(f"checkpoint has unknown parameters: {sorted(extra)}")

    @classmethod
    def load(cls, path, cfg: NetworkConfig) -> "DepthNet":
        net = cls(cfg, np.random.default_rng(0))
        net.load_arrays(read_dcw1(path))
        return net
