"""2-d convolution (cross-correlation) with stride, zero padding and groups.

Kernels are applied without flipping. Only dense (groups=1) and depthwise
(groups == in_channels) layouts are supported; both run as window extraction
plus one matmul / einsum, and the backward scatters window gradients back
with strided slice adds, so nothing here loops per pixel.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _coerce, _make, add_bias


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    eff = size + 2 * padding
    if kernel > eff:
        raise ShapeError(
            f"conv2d: kernel {kernel} exceeds padded input extent {eff}"
        )
    return (eff - kernel) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (B, C, Hout, Wout, kh, kw) view over the padded input
    w = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def _scatter_windows(dxp: np.ndarray, dwin: np.ndarray, kh: int, kw: int, stride: int):
    # adjoint of _windows: add each kernel tap back at its strided offset
    _, _, ho, wo = dwin.shape[:4]
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += dwin[
                :, :, :, :, u, v
            ]


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Correlate ``x[B,C,H,W]`` with ``w[O,C/groups,kh,kw]``.

    ``groups`` must be 1 (dense) or equal to the channel count (depthwise,
    where ``w`` has shape ``[C,1,kh,kw]``). Bias, when given, is added per
    output channel.
    """
    x = _coerce(x)
    w = _coerce(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if groups == 1:
        if Cg != C:
            raise ShapeError(f"conv2d: kernel expects {Cg} channels, input has {C}")
    elif groups == C:
        if Cg != 1 or O != C:
            raise ShapeError(
                f"conv2d: depthwise kernel must be [{C},1,kh,kw], got {w.shape}"
            )
    else:
        raise ShapeError(f"conv2d: groups={groups} unsupported (use 1 or channels={C})")
    ho = conv_out_size(H, kh, stride, padding)
    wo = conv_out_size(W, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, kh, kw, stride)

    if groups == 1:
        # (B,ho,wo, C*kh*kw) @ (C*kh*kw, O)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            B * ho * wo, C * kh * kw
        )
        w2 = w.data.reshape(O, C * kh * kw)
        out = (cols @ w2.T).reshape(B, ho, wo, O).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)

        def backward(g):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * ho * wo, O)
            dw = (g2.T @ cols).reshape(w.shape)
            dcols = g2 @ w2  # (B*ho*wo, C*kh*kw)
            dwin = dcols.reshape(B, ho, wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            _scatter_windows(dxp, dwin, kh, kw, stride)
            dx = dxp[:, :, padding : padding + H, padding : padding + W]
            return np.ascontiguousarray(dx), dw
    else:
        wd = w.data[:, 0]  # (C, kh, kw)
        out = np.einsum("bcxyuv,cuv->bcxy", win, wd, optimize=True)

        def backward(g):
            dw = np.einsum("bcxy,bcxyuv->cuv", g, win, optimize=True)[:, None]
            dwin = g[:, :, :, :, None, None] * wd[None, :, None, None, :, :]
            dxp = np.zeros_like(xp)
            _scatter_windows(dxp, dwin, kh, kw, stride)
            dx = dxp[:, :, padding : padding + H, padding : padding + W]
            return np.ascontiguousarray(dx), dw

    y = _make(out, (x, w), backward, "conv2d")
    if b is not None:
        y = add_bias(y, b, axis=1)
    return y
