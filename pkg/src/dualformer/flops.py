"""Analytic multiply-accumulate counts.

Convention: one MAC per multiply in conv / linear / matmul kernels
(a 1x1 conv mapping 4 to 8 channels over 100 positions costs
4*8*100 = 3200), plus the per-token multiplies the attention ops do.
Biases, normalizations, activations and comparisons are free.
"""
from __future__ import annotations

from .blocks import MBCONV_EXPANSION
from .model import Model, ModelConfig, NUM_STAGES


def conv2d_flops(h_out: int, w_out: int, c_in: int, c_out: int, kernel: int, groups: int = 1) -> int:
    return h_out * w_out * c_out * (c_in // groups) * kernel * kernel


def linear_flops(n: int, d_in: int, d_out: int) -> int:
    return n * d_in * d_out


def vanilla_attention_flops(n: int, d: int, d_e: int | None = None) -> int:
    """Full softmax attention: three projections plus two n x n products."""
    if d_e is None:
        d_e = d
    return 3 * n * d * d_e + 2 * n * n * d_e


def partition_attention_flops(n: int, d: int, hash_bits: int = 3) -> int:
    """One partition-attention head over n tokens of width d.

    hash n*d*bits, value projection n*d^2, intra-partition weighting
    2*n*d, inter-partition descriptors and importance head
    K*(d*dh + dh + 2*d), aggregation projection n*2d*d. Every term is
    linear in n; nothing scales with n^2.
    """
    k = 1 << hash_bits
    dh = max(1, d // 4)
    hash_cost = n * d * hash_bits
    values = n * d * d
    intra = 2 * n * d
    inter = k * (d * dh + dh + 2 * d)
    aggregate = n * 2 * d * d
    return hash_cost + values + intra + inter + aggregate


def mhpa_layer_flops(h: int, w: int, channels: int, downsample_rate: int,
                     num_heads: int, hash_bits: int = 3) -> dict:
    """Whole attention branch on an h x w grid of `channels` features."""
    k = downsample_rate
    hd, wd = -(-h // k), -(-w // k)
    n = hd * wd
    d = channels // num_heads
    down = conv2d_flops(hd, wd, channels, channels, 3, groups=channels)
    heads = num_heads * partition_attention_flops(n, d, hash_bits)
    up = conv2d_flops(hd, wd, channels, channels * k * k, 1)
    total = down + heads + up
    return {"down": down, "heads": heads, "up": up, "total": total}


def mbconv_flops(h: int, w: int, channels: int) -> int:
    hidden = MBCONV_EXPANSION * channels
    expand = conv2d_flops(h, w, channels, hidden, 1)
    dw = conv2d_flops(h, w, hidden, hidden, 3, groups=hidden)
    project = conv2d_flops(h, w, hidden, channels, 1)
    return expand + dw + project


def ffn_flops(h: int, w: int, channels: int, hidden: int) -> int:
    return conv2d_flops(h, w, channels, hidden, 1) + conv2d_flops(h, w, hidden, channels, 1)


def block_flops(h: int, w: int, cfg: ModelConfig, stage: int) -> dict:
    """One dual block of `stage` (0-based) at grid h x w."""
    c = cfg.channels[stage]
    conv_c = int(round(c * cfg.split_ratio))
    attn_c = cfg.attn_channels(stage)
    if cfg.mode == "series":
        conv_c = c
    parts = {"conv": 0, "attn": 0}
    if cfg.mode != "attn_only":
        parts["conv"] = mbconv_flops(h, w, conv_c)
    if cfg.mode != "conv_only":
        parts["attn"] = mhpa_layer_flops(
            h, w, attn_c, cfg.downsample_rates[stage], cfg.heads[stage],
            cfg.hash_bits[stage],
        )["total"]
    parts["ffn"] = ffn_flops(h, w, c, int(round(c * cfg.ffn_ratio)))
    parts["total"] = parts["conv"] + parts["attn"] + parts["ffn"]
    return parts


def count_flops(model_or_cfg, h: int = 224, w: int = 224) -> dict:
    """Per-stage and total MACs for one image at h x w."""
    cfg = model_or_cfg.config if isinstance(model_or_cfg, Model) else model_or_cfg
    cfg.validate()
    if h % 32 or w % 32:
        raise ValueError(f"resolution {h}x{w} must be a multiple of 32")
    c1 = cfg.channels[0]
    c_mid = max(2, c1 // 2)
    stem = (
        conv2d_flops(h // 2, w // 2, 3, c_mid, 3)
        + conv2d_flops(h // 4, w // 4, c_mid, c1, 3)
    )
    gh, gw = h // 4, w // 4
    stages = []
    total = stem
    for si in range(NUM_STAGES):
        entry = {"transition": 0, "blocks": 0}
        if si > 0:
            gh, gw = gh // 2, gw // 2
            entry["transition"] = conv2d_flops(gh, gw, cfg.channels[si - 1], cfg.channels[si], 3)
        per_block = block_flops(gh, gw, cfg, si)["total"]
        entry["blocks"] = per_block * cfg.depths[si]
        entry["total"] = entry["transition"] + entry["blocks"]
        entry["grid"] = (gh, gw)
        stages.append(entry)
        total += entry["total"]
    head = linear_flops(1, cfg.channels[-1], cfg.num_classes)
    total += head
    return {"stem": stem, "stages": stages, "head": head, "total": total}
