"""Throughput measurements for partitioners and whole-model forwards."""
from __future__ import annotations

import time

import numpy as np

from .model import Model, forward
from .partition import partition_throughput


def partition_comparison(
    n: int = 3136,
    d: int = 64,
    num_clusters: int = 8,
    repeats: int = 9,
    seed: int = 0,
    kmeans_iters: int = 5,
) -> dict:
    """Median tokens/sec for sign-hash vs k-means partitioning, same workload.

    size_param is hash bits for the hash (2^bits = num_clusters) and the
    cluster count for k-means.
    """
    bits = int(num_clusters).bit_length() - 1
    if 1 << bits != num_clusters:
        raise ValueError(f"num_clusters must be a power of two, got {num_clusters}")
    lsh = partition_throughput("lsh", n, d, bits, repeats=repeats, seed=seed)
    km = partition_throughput(
        "kmeans", n, d, num_clusters, repeats=repeats, seed=seed, kmeans_iters=kmeans_iters
    )
    return {
        "lsh": lsh,
        "kmeans": km,
        "speedup": lsh["median_tokens_per_sec"] / km["median_tokens_per_sec"],
    }


def forward_throughput(
    model: Model,
    batch: int = 2,
    height: int = 224,
    width: int = 224,
    repeats: int = 5,
    seed: int = 0,
) -> dict:
    """Median eval-mode images/sec over timed repeats (one warmup pass)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, 3, height, width)).astype(model.dtype)
    forward(model, x)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(model, x)
        times.append(time.perf_counter() - t0)
    times = np.sort(np.asarray(times))
    return {
        "preset": model.config.name,
        "batch": batch,
        "resolution": f"{height}x{width}",
        "median_images_per_sec": batch / float(np.median(times)),
        "worst_images_per_sec": batch / float(times[-1]),
    }


def rows_to_csv(rows: list[dict]) -> str:
    """Rows share a schema; column order follows the first row."""
    if not rows:
        raise ValueError("no rows to serialize")
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
