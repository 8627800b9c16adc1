"""Four-stage backbone assembly, presets, parameter accounting, state walking.

Resolution path for an H x W input: stem /4, then /2 at each stage
transition, so stage i runs at H/2^(i+1). Inputs must be divisible by 32 so
the last stage has at least one token and every attention layer's
downsample rate divides its grid.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import precision
from .blocks import (
    DualBlockParams,
    MODES,
    PatchEmbedParams,
    dual_block_forward,
    make_dual_block,
    make_patch_embed,
    patch_embed_forward,
)
from .init import trunc_normal, zeros_param
from .mhpa import MhpaConfig
from .norms import BatchNorm2d
from .partition import NormVectors
from .tensor import ShapeError, Tensor, add_bias, constant, matmul, tmean

NUM_STAGES = 4
DEFAULT_HASH_BITS = (3, 3, 3, 3)
DEFAULT_DOWNSAMPLE = (4, 2, 2, 1)


class ConfigError(ValueError):
    """Invalid model configuration."""


def default_heads(channels: int, split_ratio: float = 0.5) -> int:
    """Largest divisor of the attention-branch width not above channels/32."""
    branch = channels - int(round(channels * split_ratio))
    cap = max(1, channels // 32)
    for h in range(min(cap, branch), 0, -1):
        if branch % h == 0:
            return h
    return 1


@dataclass(frozen=True)
class ModelConfig:
    name: str = "custom"
    depths: tuple = (1, 1, 1, 1)
    channels: tuple = (16, 32, 64, 128)
    heads: tuple = (1, 1, 2, 4)
    hash_bits: tuple = DEFAULT_HASH_BITS
    downsample_rates: tuple = DEFAULT_DOWNSAMPLE
    split_ratio: float = 0.5
    ffn_ratio: float = 4.0
    num_classes: int = 1000
    mode: str = "parallel"
    share_partitions: bool = False
    resample_norms: bool = False

    def validate(self) -> None:
        for fname in ("depths", "channels", "heads", "hash_bits", "downsample_rates"):
            seq = getattr(self, fname)
            if len(seq) != NUM_STAGES or any(int(v) < 1 for v in seq):
                raise ConfigError(f"{fname} must be {NUM_STAGES} positive ints, got {seq}")
        if self.mode not in MODES:
            raise ConfigError(f"mode {self.mode!r} not in {MODES}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.ffn_ratio <= 0:
            raise ConfigError(f"ffn_ratio must be positive, got {self.ffn_ratio}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        for i in range(NUM_STAGES):
            c = self.channels[i]
            if c % 2:
                raise ConfigError(f"stage {i + 1}: channels must be even, got {c}")
            branch = self.attn_channels(i)
            if branch < 1 or int(round(c * self.split_ratio)) < 1:
                raise ConfigError(f"stage {i + 1}: split leaves an empty branch at {c} channels")
            if branch % self.heads[i]:
                raise ConfigError(
                    f"stage {i + 1}: attention width {branch} not divisible by "
                    f"{self.heads[i]} heads"
                )

    def attn_channels(self, stage: int) -> int:
        c = self.channels[stage]
        if self.mode == "series":
            return c
        return c - int(round(c * self.split_ratio))

    def mhpa_config(self, stage: int) -> MhpaConfig:
        return MhpaConfig(
            downsample_rate=self.downsample_rates[stage],
            hash_bits=self.hash_bits[stage],
            num_heads=self.heads[stage],
            attend={"intra_only": "intra_only", "inter_only": "inter_only"}.get(
                self.mode, "full"
            ),
            share_partitions=self.share_partitions,
            resample_norms=self.resample_norms,
        )


def _preset(name, depths, channels, num_classes=1000) -> ModelConfig:
    return ModelConfig(
        name=name,
        depths=depths,
        channels=channels,
        heads=tuple(default_heads(c) for c in channels),
        num_classes=num_classes,
    )


PRESETS: dict[str, ModelConfig] = {
    "T": _preset("T", (2, 2, 4, 2), (64, 128, 256, 320)),
    "XS": _preset("XS", (2, 2, 4, 2), (64, 128, 320, 368)),
    "S": _preset("S", (4, 4, 7, 3), (64, 128, 320, 512)),
    "B": _preset("B", (6, 12, 25, 7), (64, 128, 368, 560)),
    "Micro": _preset("Micro", (1, 1, 1, 1), (16, 32, 64, 128), num_classes=4),
}


def get_preset(name: str) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return PRESETS[name]


# -- flat key=value config text -----------------------------------------------

_INT_TUPLES = ("depths", "channels", "heads", "hash_bits", "downsample_rates")
_FIELD_ORDER = (
    "name", "depths", "channels", "heads", "hash_bits", "downsample_rates",
    "split_ratio", "ffn_ratio", "num_classes", "mode",
    "share_partitions", "resample_norms",
)


def config_to_text(cfg: ModelConfig) -> str:
    lines = []
    for key in _FIELD_ORDER:
        val = getattr(cfg, key)
        if key in _INT_TUPLES:
            val = ",".join(str(int(v)) for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(kv) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    args = {}
    for key, val in kv.items():
        if key in _INT_TUPLES:
            args[key] = tuple(int(v) for v in val.split(","))
        elif key in ("split_ratio", "ffn_ratio"):
            args[key] = float(val)
        elif key == "num_classes":
            args[key] = int(val)
        elif key in ("share_partitions", "resample_norms"):
            if val not in ("true", "false"):
                raise ConfigError(f"{key} must be true or false, got {val!r}")
            args[key] = val == "true"
        else:
            args[key] = val
    cfg = ModelConfig(**args)
    cfg.validate()
    return cfg


# -- model ---------------------------------------------------------------


@dataclass
class StageParams:
    embed: PatchEmbedParams | None
    blocks: list[DualBlockParams] = field(default_factory=list)


@dataclass
class Model:
    config: ModelConfig
    stem: PatchEmbedParams
    stages: list[StageParams]
    head_w: Tensor
    head_b: Tensor
    dtype: np.dtype = None


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Materialize weights for a config. Same seed, same bits.

    Truncated-normal init everywhere except the residual terminal
    projections (inverted-bottleneck project, attention expansion, FFN
    second conv), which start at zero, so a fresh model maps features
    through the blocks untouched.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    c1 = cfg.channels[0]
    stem = make_patch_embed([3, max(2, c1 // 2), c1], rng)
    stages = []
    for si in range(NUM_STAGES):
        embed = None
        if si > 0:
            embed = make_patch_embed([cfg.channels[si - 1], cfg.channels[si]], rng)
        blocks = [
            make_dual_block(
                cfg.channels[si],
                cfg.mode,
                cfg.mhpa_config(si),
                rng,
                split_ratio=cfg.split_ratio,
                ffn_ratio=cfg.ffn_ratio,
            )
            for _ in range(cfg.depths[si])
        ]
        stages.append(StageParams(embed=embed, blocks=blocks))
    head_w = trunc_normal(rng, (cfg.channels[-1], cfg.num_classes))
    head_b = zeros_param(cfg.num_classes)
    return Model(
        config=cfg,
        stem=stem,
        stages=stages,
        head_w=head_w,
        head_b=head_b,
        dtype=precision.default_dtype(),
    )


def _forward(
    model: Model,
    images,
    train: bool,
    frozen,
    trace,
    capture_stage,
):
    if not isinstance(images, Tensor):
        images = constant(np.asarray(images), dtype=model.dtype)
    elif images.dtype != model.dtype:
        images = constant(images.data.astype(model.dtype))
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeError(f"expected images (B, 3, H, W), got {images.shape}")
    h, w = images.shape[2], images.shape[3]
    if h % 32 or w % 32 or h < 32 or w < 32:
        raise ShapeError(f"input resolution {h}x{w} must be a positive multiple of 32")

    frozen_iter = iter(frozen) if frozen is not None else None
    x = patch_embed_forward(images, model.stem, train)
    captured = None
    for si, stage in enumerate(model.stages):
        if stage.embed is not None:
            x = patch_embed_forward(x, stage.embed, train)
        for bi, block in enumerate(stage.blocks):
            x = dual_block_forward(
                x,
                block,
                model.config.mode,
                train=train,
                frozen_iter=frozen_iter,
                trace=trace,
                trace_tag={"stage": si + 1, "block": bi + 1},
            )
        if capture_stage == si + 1:
            captured = x
    pooled = tmean(x, axis=(2, 3))  # (B, C)
    logits = add_bias(matmul(pooled, model.head_w), model.head_b, axis=-1)
    return logits, captured


def forward(model: Model, images, train: bool = False, frozen=None, trace=None) -> Tensor:
    """Images (B, 3, H, W) to logits (B, num_classes).

    ``frozen`` is a flat sequence of partition assignments consumed in
    traversal order (the format :func:`capture_partitions` emits); ``trace``
    is an optional list that records every partition the forward makes.
    """
    logits, _ = _forward(model, images, train, frozen, trace, None)
    return logits


def forward_features(
    model: Model, images, stage: int, train: bool = False
) -> tuple[Tensor, Tensor]:
    """Forward that also returns the feature map leaving ``stage`` (1-based)."""
    if not 1 <= stage <= NUM_STAGES:
        raise ConfigError(f"stage must be 1..{NUM_STAGES}, got {stage}")
    logits, captured = _forward(model, images, train, None, None, stage)
    return logits, captured


def capture_partitions(model: Model, images, train: bool = False) -> list:
    """Run a forward and return the partition trace (one entry per hash site)."""
    trace: list = []
    _forward(model, images, train, None, trace, None)
    return trace


# -- state walking -----------------------------------------------------------


def iter_state(obj, prefix: str = ""):
    """Yield (name, array, kind) over every tensor in a params tree.

    Deterministic order: dataclass field order, list index order. Learnable
    tensors are kind 'param'; running stats and hash hyperplanes are
    'buffer'.
    """
    if isinstance(obj, Tensor):
        yield prefix, obj.data, "param" if obj.requires_grad else "buffer"
    elif isinstance(obj, np.ndarray):
        yield prefix, obj, "buffer"
    elif isinstance(obj, (BatchNorm2d, NormVectors)) or dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f.name
            if name in ("config", "dtype"):
                continue
            yield from iter_state(getattr(obj, name), f"{prefix}.{name}" if prefix else name)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from iter_state(v, f"{prefix}[{i}]")
    # scalars, strings, None, rng objects carry no state


def named_parameters(model: Model) -> list[tuple[str, Tensor]]:
    out = []

    def walk(obj, prefix=""):
        if isinstance(obj, Tensor):
            if obj.requires_grad:
                out.append((prefix, obj))
        elif dataclasses.is_dataclass(obj) and not isinstance(obj, np.random.Generator):
            for f in dataclasses.fields(obj):
                if f.name in ("config", "dtype"):
                    continue
                walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
        elif isinstance(obj, (list, tuple)):
            for i, v in enumerate(obj):
                walk(v, f"{prefix}[{i}]")

    walk(model)
    return out


def count_params(model: Model) -> int:
    """Exact number of learnable scalars."""
    return sum(int(t.size) for _, t in named_parameters(model))
