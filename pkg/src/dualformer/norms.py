"""Normalization layers over NCHW feature maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add_bias, constant, mul, reshape, tmean, tsqrt


def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each spatial position across its channel vector."""
    m = tmean(x, axis=1, keepdims=True)
    xc = x - m
    v = tmean(xc * xc, axis=1, keepdims=True)
    xn = xc / tsqrt(v + eps)
    c = gamma.shape[0]
    return mul(xn, reshape(gamma, (1, c, 1, 1))) + reshape(beta, (1, c, 1, 1))


@dataclass
class BatchNorm2d:
    """Affine batch norm state; running stats are buffers, not parameters."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def make_batch_norm(channels: int, dtype) -> BatchNorm2d:
    return BatchNorm2d(
        gamma=Tensor(np.ones(channels), requires_grad=True, dtype=dtype),
        beta=Tensor(np.zeros(channels), requires_grad=True, dtype=dtype),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
    )


def batch_norm(x: Tensor, bn: BatchNorm2d, train: bool) -> Tensor:
    """Batch norm over (batch, height, width) per channel.

    Training mode normalizes with (differentiable) batch statistics and
    updates the running buffers as a side effect; inference mode uses the
    buffers as constants, so rows of a batch stay independent.
    """
    c = bn.gamma.shape[0]
    if train:
        m = tmean(x, axis=(0, 2, 3), keepdims=True)
        xc = x - m
        v = tmean(xc * xc, axis=(0, 2, 3), keepdims=True)
        mom = bn.momentum
        bn.running_mean = (1 - mom) * bn.running_mean + mom * m.data.reshape(c).astype(
            bn.running_mean.dtype
        )
        bn.running_var = (1 - mom) * bn.running_var + mom * v.data.reshape(c).astype(
            bn.running_var.dtype
        )
        xn = xc / tsqrt(v + bn.eps)
    else:
        rm = constant(bn.running_mean.reshape(1, c, 1, 1), dtype=x.dtype)
        rv = constant(bn.running_var.reshape(1, c, 1, 1), dtype=x.dtype)
        xn = (x - rm) / tsqrt(rv + bn.eps)
    return mul(xn, reshape(bn.gamma, (1, c, 1, 1))) + reshape(bn.beta, (1, c, 1, 1))
