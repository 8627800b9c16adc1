"""Scaled dot-product attention over a single token matrix.

Kept as the reference point the partition-wise path is measured against:
the oracle-equivalence tests check it per query, and the cost model uses it
as the quadratic baseline.
"""
from __future__ import annotations

import math

from .tensor import ShapeError, Tensor, matmul, softmax, transpose


def vanilla_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_e)) V with Q = xWq, K = xWk, V = xWv.

    ``x`` is (n, d); the projection widths set d_e. Single head, no masking.
    """
    if x.ndim != 2:
        raise ShapeError(f"vanilla_attention: tokens must be (n, d), got {x.shape}")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv)):
        if w.ndim != 2 or w.shape[0] != x.shape[1]:
            raise ShapeError(
                f"vanilla_attention: {name} {w.shape} does not match tokens {x.shape}"
            )
    if wq.shape[1] != wk.shape[1]:
        raise ShapeError(
            f"vanilla_attention: query/key widths differ: {wq.shape} vs {wk.shape}"
        )
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    de = q.shape[-1]
    scores = matmul(q, transpose(k, (1, 0))) * (1.0 / math.sqrt(de))
    return matmul(softmax(scores, axis=-1), v)
