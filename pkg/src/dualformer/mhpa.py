"""Partition-wise attention.

The layer replaces dot-product attention entirely. Per head, tokens are
bucketed by LSH (no gradient through the assignment), reweighted inside each
bucket (intra), summarized per bucket and reweighted across buckets (inter),
and the two views are fused back per token. Around the heads sit a strided
depthwise downsample and a channel-to-spatial expansion that restores the
input resolution through a skip connection.

Shape grammar: public single-instance ops take (n, d) token matrices plus a
:class:`~dualformer.partition.Partition`; the layer-level forward runs the
same math batched as (batch, n, d) per head.

Division safety: every data-dependent denominator in the intra weighting
carries +1e-6, and intra inputs are expected to be nonnegative (the layer
gates them through a sigmoid first). Bucket coefficients in the inter step
are a masked softmax, so they sum to one exactly and empty buckets get
weight zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import conv2d
from .norms import layer_norm_channels
from .partition import NormVectors, Partition, PartitionError, hash_codes
from .tensor import (
    ShapeError,
    Tensor,
    add_bias,
    concat,
    constant,
    gather_segments,
    gelu,
    matmul,
    mul,
    narrow,
    reshape,
    segment_sum,
    sigmoid,
    texp,
    transpose,
    tsum,
)

EPS = 1e-6


@dataclass
class HeadLayout:
    """How a branch width splits into attention heads."""

    num_heads: int
    head_dim: int

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise ShapeError(f"bad head layout: {self.num_heads} x {self.head_dim}")

    @property
    def width(self) -> int:
        return self.num_heads * self.head_dim


@dataclass
class MhpaHeadParams:
    """Learnable state for one head: token projection, importance predictor,
    aggregation projection, and the frozen hashing hyperplanes."""

    token_w: Tensor  # (d, d)
    token_b: Tensor  # (d,)
    imp_w1: Tensor  # (d, dh)
    imp_b1: Tensor  # (dh,)
    imp_w2: Tensor  # (dh, 1)
    imp_b2: Tensor  # (1,)
    agg_w: Tensor  # (2d, d)
    agg_b: Tensor  # (d,)
    norms: NormVectors


@dataclass
class MhpaConfig:
    downsample_rate: int = 1
    hash_bits: int = 3
    num_heads: int = 1
    attend: str = "full"  # full | intra_only | inter_only
    share_partitions: bool = False
    resample_norms: bool = False

    @property
    def num_clusters(self) -> int:
        return 1 << self.hash_bits


@dataclass
class MhpaParams:
    """One attention layer over a C-channel map."""

    ln_gamma: Tensor  # (C,)
    ln_beta: Tensor  # (C,)
    down_w: Tensor  # (C, 1, 3, 3) depthwise
    down_b: Tensor  # (C,)
    up_w: Tensor  # (C*k*k, C, 1, 1)
    up_b: Tensor  # (C*k*k,)
    heads: list[MhpaHeadParams] = field(default_factory=list)
    shared_norms: NormVectors | None = None
    norm_rng: np.random.Generator | None = None


# -- batched cores ------------------------------------------------------------
# x is (..., n, d) with an integer assignment of shape (..., n); the public
# single-instance ops below are the same code with no batch axes.


def segment_counts(assign: np.ndarray, num_clusters: int) -> np.ndarray:
    lead = int(np.prod(assign.shape[:-1], dtype=np.int64)) if assign.ndim > 1 else 1
    flat = assign.reshape(lead, -1).astype(np.int64, copy=False)
    offs = flat + num_clusters * np.arange(lead, dtype=np.int64)[:, None]
    counts = np.bincount(offs.reshape(-1), minlength=lead * num_clusters)
    return counts.reshape(assign.shape[:-1] + (num_clusters,))


def _intra_core(x: Tensor, x_tilde: Tensor, assign: np.ndarray, num_clusters: int) -> Tensor:
    sums = segment_sum(x, assign, num_clusters)
    w = x / (gather_segments(sums, assign) + EPS)
    wsums = segment_sum(w, assign, num_clusters)
    return (w * x_tilde) / (gather_segments(wsums, assign) + EPS)


def _inter_core(
    x_tilde: Tensor,
    assign: np.ndarray,
    num_clusters: int,
    counts: np.ndarray,
    head: MhpaHeadParams,
) -> Tensor:
    # per-bucket mean descriptor; empty buckets stay exactly zero
    sums = segment_sum(x_tilde, assign, num_clusters)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)[..., None]
    descr = mul(sums, constant(inv, dtype=x_tilde.dtype))

    h = gelu(add_bias(matmul(descr, head.imp_w1), head.imp_b1, axis=-1))
    scores = add_bias(matmul(h, head.imp_w2), head.imp_b2, axis=-1)  # (..., K, 1)

    # masked softmax over buckets: coefficients sum to one, empties get zero
    mask = (counts > 0)[..., None]
    raw = scores.data
    shifted_max = np.where(mask, raw, -np.inf).max(axis=-2, keepdims=True)
    e = mul(texp(scores - constant(shifted_max, dtype=raw.dtype)),
            constant(mask.astype(raw.dtype), dtype=raw.dtype))
    coeff = e / tsum(e, axis=-2, keepdims=True)
    return mul(descr, coeff)


def _aggregate_core(
    intra: Tensor, inter: Tensor, assign: np.ndarray, head: MhpaHeadParams
) -> Tensor:
    scattered = gather_segments(inter, assign)
    fused = concat([intra, scattered], axis=-1)
    return add_bias(matmul(fused, head.agg_w), head.agg_b, axis=-1)


# -- public single-instance ops ----------------------------------------------


def _check_tokens(x: Tensor, p: Partition, name: str) -> None:
    if x.ndim != 2:
        raise ShapeError(f"{name}: tokens must be (n, d), got {x.shape}")
    if x.shape[0] != p.num_tokens:
        raise ShapeError(
            f"{name}: partition covers {p.num_tokens} tokens, input has {x.shape[0]}"
        )


def intra_partition_attention(x: Tensor, x_tilde: Tensor, p: Partition) -> Tensor:
    """Reweight tokens inside each bucket.

    Per bucket and per channel: w_i = x_i / (sum_j x_j + eps), then
    out_i = (w_i * x̃_i) / (sum_j w_j + eps). ``x`` supplies the weights and
    is expected to be nonnegative (gate it upstream); ``x_tilde`` supplies
    the values.
    """
    _check_tokens(x, p, "intra_partition_attention")
    if x_tilde.shape != x.shape:
        raise ShapeError(
            f"intra_partition_attention: value shape {x_tilde.shape} != weight shape {x.shape}"
        )
    return _intra_core(x, x_tilde, p.assignment, p.num_clusters)


def inter_partition_attention(x_tilde: Tensor, p: Partition, head: MhpaHeadParams) -> Tensor:
    """Bucket descriptors scaled by normalized importance.

    Each bucket's descriptor is the mean of its tokens; a two-layer
    importance predictor scores every bucket and a softmax over buckets
    (restricted to non-empty ones) produces coefficients summing to one.
    Returns one row per bucket, zeros for empty buckets.
    """
    _check_tokens(x_tilde, p, "inter_partition_attention")
    return _inter_core(x_tilde, p.assignment, p.num_clusters, p.counts, head)


def global_local_aggregate(
    intra: Tensor, inter: Tensor, p: Partition, head: MhpaHeadParams
) -> Tensor:
    """Fuse per-token and per-bucket views: look up each token's bucket row,
    concatenate along channels, project 2d -> d."""
    _check_tokens(intra, p, "global_local_aggregate")
    if inter.ndim != 2 or inter.shape[0] != p.num_clusters:
        raise ShapeError(
            f"global_local_aggregate: bucket rows {inter.shape} != K={p.num_clusters}"
        )
    return _aggregate_core(intra, inter, p.assignment, head)


def space_to_channel(x: Tensor, rate: int) -> Tensor:
    """Fold rate x rate spatial tiles into channels (inverse of channel_to_spatial)."""
    b, c, h, w = x.shape
    if h % rate or w % rate:
        raise ShapeError(f"space_to_channel: {h}x{w} not divisible by rate {rate}")
    r = reshape(x, (b, c, h // rate, rate, w // rate, rate))
    r = transpose(r, (0, 1, 3, 5, 2, 4))
    return reshape(r, (b, c * rate * rate, h // rate, w // rate))


def channel_to_spatial(x: Tensor, rate: int, skip: Tensor) -> Tensor:
    """Unfold channel blocks into rate x rate spatial tiles, then add the skip.

    Channel index c*rate*rate + dy*rate + dx lands on spatial offset (dy, dx)
    of output channel c. ``skip`` must already have the output shape.
    """
    b, ck2, h, w = x.shape
    if rate < 1 or ck2 % (rate * rate):
        raise ShapeError(
            f"channel_to_spatial: {ck2} channels not divisible by rate^2={rate * rate}"
        )
    c = ck2 // (rate * rate)
    if skip.shape != (b, c, h * rate, w * rate):
        raise ShapeError(
            f"channel_to_spatial: skip {skip.shape} != expected {(b, c, h * rate, w * rate)}"
        )
    r = reshape(x, (b, c, rate, rate, h, w))
    r = transpose(r, (0, 1, 4, 2, 5, 3))
    return reshape(r, (b, c, h * rate, w * rate)) + skip


# -- layer forward -------------------------------------------------------


def mhpa_head_forward(
    tokens: Tensor,
    head: MhpaHeadParams,
    num_clusters: int,
    assign: np.ndarray | None = None,
    attend: str = "full",
) -> tuple[Tensor, np.ndarray]:
    """Run one head over (..., n, d) tokens; returns (output, assignment).

    The weight path gates raw tokens through a sigmoid; the value path is the
    token projection. When ``assign`` is given it is used verbatim (frozen
    partitions); otherwise tokens are hashed against the head's hyperplanes.
    """
    if assign is None:
        assign = hash_codes(
            tokens.data.astype(np.float64, copy=False), np.asarray(head.norms.beta, dtype=np.float64)
        )
    if assign.shape != tokens.shape[:-1]:
        raise ShapeError(
            f"mhpa_head_forward: assignment {assign.shape} does not match tokens {tokens.shape}"
        )
    counts = segment_counts(assign, num_clusters)
    gate = sigmoid(tokens)
    x_tilde = add_bias(matmul(tokens, head.token_w), head.token_b, axis=-1)

    if attend == "inter_only":
        intra = constant(np.zeros_like(x_tilde.data), dtype=x_tilde.dtype)
    else:
        intra = _intra_core(gate, x_tilde, assign, num_clusters)
    if attend == "intra_only":
        shape = x_tilde.shape[:-2] + (num_clusters, x_tilde.shape[-1])
        inter = constant(np.zeros(shape), dtype=x_tilde.dtype)
    else:
        inter = _inter_core(x_tilde, assign, num_clusters, counts, head)
    out = _aggregate_core(intra, inter, assign, head)
    return out, assign


def mhpa_forward(
    x: Tensor,
    params: MhpaParams,
    cfg: MhpaConfig,
    frozen_iter=None,
    trace: list | None = None,
    trace_tag: dict | None = None,
) -> Tensor:
    """Full layer over a (B, C, H, W) map, resolution preserved.

    Pipeline: channel layer norm -> strided 3x3 depthwise downsample (rate k)
    -> per-head partition attention on the token grid -> 1x1 conv expanding
    C to C*k^2 -> channel-to-spatial unfold with the raw input as skip. With
    the expansion conv zeroed the layer is exactly the identity.
    """
    if x.ndim != 4:
        raise ShapeError(f"mhpa_forward: expected (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    k = cfg.downsample_rate
    if k < 1 or h % k or w % k:
        raise ShapeError(f"mhpa_forward: map {h}x{w} not divisible by downsample rate {k}")
    if cfg.num_heads != len(params.heads) or c % cfg.num_heads:
        raise ShapeError(
            f"mhpa_forward: {c} channels do not split into {cfg.num_heads} heads"
        )
    d = c // cfg.num_heads
    K = cfg.num_clusters

    skip = x
    normed = layer_norm_channels(x, params.ln_gamma, params.ln_beta)
    down = conv2d(normed, params.down_w, params.down_b, stride=k, padding=1, groups=c)
    hs, ws = down.shape[2], down.shape[3]
    n = hs * ws
    toks = transpose(reshape(down, (b, c, n)), (0, 2, 1))  # (B, n, C)

    shared_assign = None
    if cfg.share_partitions:
        if frozen_iter is not None:
            shared_assign = np.asarray(next(frozen_iter))
        else:
            beta = params.shared_norms.beta
            if cfg.resample_norms and params.norm_rng is not None:
                beta = params.norm_rng.standard_normal(beta.shape)
            shared_assign = hash_codes(toks.data.astype(np.float64, copy=False), beta)
        if trace is not None:
            trace.append(
                {**(trace_tag or {}), "head": None, "assignment": shared_assign.copy(),
                 "shape": (hs, ws), "num_clusters": K}
            )

    outs = []
    for hi, head in enumerate(params.heads):
        sl = narrow(toks, 2, hi * d, d)
        if shared_assign is not None:
            assign = shared_assign
        elif frozen_iter is not None:
            assign = np.asarray(next(frozen_iter))
        elif cfg.resample_norms and params.norm_rng is not None:
            beta = params.norm_rng.standard_normal(head.norms.beta.shape)
            assign = hash_codes(sl.data.astype(np.float64, copy=False), beta)
        else:
            assign = None
        out, assign = mhpa_head_forward(sl, head, K, assign=assign, attend=cfg.attend)
        if trace is not None and not cfg.share_partitions:
            trace.append(
                {**(trace_tag or {}), "head": hi, "assignment": assign.copy(),
                 "shape": (hs, ws), "num_clusters": K}
            )
        outs.append(out)

    merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)  # (B, n, C)
    grid = reshape(transpose(merged, (0, 2, 1)), (b, c, hs, ws))
    up = conv2d(grid, params.up_w, params.up_b)
    return channel_to_spatial(up, k, skip)


def partition_to_grayscale(assignment: np.ndarray, num_clusters: int, shape) -> np.ndarray:
    """Map bucket ids on a token grid to 8-bit gray levels (id * 255/(K-1))."""
    grid = assignment.reshape(shape)
    if num_clusters == 1:
        return np.zeros(shape, dtype=np.uint8)
    scale = 255.0 / (num_clusters - 1)
    return np.round(grid * scale).astype(np.uint8)
