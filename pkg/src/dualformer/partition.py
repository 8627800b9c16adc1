"""Token partitioning: random-hyperplane LSH and Lloyd k-means.

Both produce a :class:`Partition` mapping each token to a bucket. LSH is the
production path (one matmul plus bit packing, linear in token count); k-means
is the slower clustering baseline it is benchmarked against. Assignments are
plain integer arrays and never carry gradients.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class PartitionError(ValueError):
    """Invalid clustering request (bad K, empty input, ...)."""


@dataclass
class NormVectors:
    """Hyperplane normals for sign hashing, one row per hash bit."""

    beta: np.ndarray  # (num_bits, dim)

    @property
    def num_bits(self) -> int:
        return self.beta.shape[0]

    @property
    def dim(self) -> int:
        return self.beta.shape[1]

    @property
    def num_clusters(self) -> int:
        return 1 << self.num_bits


def sample_norm_vectors(num_bits: int, dim: int, rng: np.random.Generator) -> NormVectors:
    if num_bits < 1:
        raise PartitionError(f"need at least one hash bit, got {num_bits}")
    return NormVectors(rng.standard_normal((num_bits, dim)))


@dataclass
class Partition:
    """Bucket assignment for one token matrix."""

    assignment: np.ndarray  # (n,) int64 in [0, num_clusters)
    num_clusters: int
    counts: np.ndarray = field(default=None)  # (num_clusters,) int64
    centroids: np.ndarray | None = None  # (num_clusters, d), k-means only

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.counts is None:
            self.counts = np.bincount(self.assignment, minlength=self.num_clusters)
        self.validate()

    def validate(self) -> None:
        n = self.assignment.shape[0]
        if self.assignment.ndim != 1 or n < 1:
            raise PartitionError(f"assignment must be a non-empty vector, got {self.assignment.shape}")
        if self.num_clusters < 1:
            raise PartitionError(f"num_clusters must be positive, got {self.num_clusters}")
        if self.assignment.min() < 0 or self.assignment.max() >= self.num_clusters:
            raise PartitionError(
                f"assignment values outside [0, {self.num_clusters})"
            )
        if self.counts.shape != (self.num_clusters,) or int(self.counts.sum()) != n:
            raise PartitionError("counts do not tally with the assignment")

    @property
    def num_tokens(self) -> int:
        return self.assignment.shape[0]


def _as_array(tokens) -> np.ndarray:
    if isinstance(tokens, Tensor):
        tokens = tokens.data
    arr = np.asarray(tokens, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise PartitionError(f"tokens must be a non-empty (n, d) matrix, got {arr.shape}")
    return arr


def hash_codes(tokens: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Sign-hash tokens against hyperplanes: code = sum_i bit_i << i.

    A token exactly on a hyperplane (dot product zero) hashes to bit 1.
    Works on any leading batch shape: tokens (..., n, d), beta (bits, d).
    """
    proj = np.matmul(tokens, beta.T)  # (..., n, bits)
    bits = (proj >= 0.0).astype(np.int64)
    weights = (1 << np.arange(beta.shape[0], dtype=np.int64))
    return bits @ weights


def lsh_assign(tokens, norms: NormVectors) -> Partition:
    """Bucket tokens by random-hyperplane sign hash; 2**num_bits buckets.

    Empty buckets are legal and expected; downstream ops treat them as
    zero-size groups.
    """
    arr = _as_array(tokens)
    if norms.dim != arr.shape[1]:
        raise PartitionError(
            f"norm vectors have dim {norms.dim}, tokens have dim {arr.shape[1]}"
        )
    codes = hash_codes(arr, np.asarray(norms.beta, dtype=np.float64))
    return Partition(assignment=codes, num_clusters=norms.num_clusters)


def kmeans_objective(tokens, partition: Partition) -> float:
    """Sum of squared distances from each token to its centroid."""
    arr = _as_array(tokens)
    if partition.centroids is None:
        raise PartitionError("partition has no centroids")
    diff = arr - partition.centroids[partition.assignment]
    return float((diff * diff).sum())


def _sq_dists(arr: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, K) squared distances without forming the (n, K, d) cube; the
    # expansion can dip a hair below zero for points at a center
    d2 = (
        (arr * arr).sum(axis=1)[:, None]
        - 2.0 * arr @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeans_assign(tokens, num_clusters: int, max_iters: int = 5, seed: int = 0) -> Partition:
    """Lloyd's algorithm with distance-weighted seeding.

    Empty clusters are reseeded to the point farthest from its own centroid,
    which can only lower the objective; the objective is asserted
    non-increasing across iterations.
    """
    arr = _as_array(tokens)
    n, _ = arr.shape
    if num_clusters < 1:
        raise PartitionError(f"num_clusters must be positive, got {num_clusters}")
    if num_clusters > n:
        raise PartitionError(f"num_clusters={num_clusters} exceeds token count n={n}")
    if max_iters < 1:
        raise PartitionError(f"max_iters must be positive, got {max_iters}")
    rng = np.random.default_rng(seed)

    # distance-weighted (k-means++) seeding
    centers = np.empty((num_clusters, arr.shape[1]))
    centers[0] = arr[rng.integers(n)]
    d2 = _sq_dists(arr, centers[:1]).min(axis=1)
    for k in range(1, num_clusters):
        total = d2.sum()
        if total <= 0.0:
            centers[k] = arr[rng.integers(n)]
        else:
            centers[k] = arr[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((arr - centers[k]) ** 2).sum(axis=1))

    prev_obj = np.inf
    assign = None
    for _ in range(max_iters):
        dists = _sq_dists(arr, centers)
        assign = dists.argmin(axis=1)
        # repair empties before measuring: steal the worst-fit point
        counts = np.bincount(assign, minlength=num_clusters)
        for k in np.flatnonzero(counts == 0):
            errs = dists[np.arange(n), assign].copy()
            errs[counts[assign] <= 1] = -np.inf  # do not orphan a singleton
            j = int(errs.argmax())
            counts[assign[j]] -= 1
            assign[j] = k
            counts[k] = 1
            centers[k] = arr[j]
            dists[:, k] = ((arr - centers[k]) ** 2).sum(axis=1)
        diff = arr - centers[assign]
        obj = float((diff * diff).sum())
        if obj > prev_obj * (1.0 + 1e-9) + 1e-9:
            raise AssertionError(
                f"k-means objective increased: {prev_obj} -> {obj}"
            )
        prev_obj = obj
        # update step
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, arr)
        counts = np.bincount(assign, minlength=num_clusters)
        nonzero = counts > 0
        centers[nonzero] = sums[nonzero] / counts[nonzero, None]

    return Partition(
        assignment=assign,
        num_clusters=num_clusters,
        centroids=centers.copy(),
    )


def partition_throughput(
    method: str,
    n: int,
    d: int,
    size_param: int,
    repeats: int = 9,
    seed: int = 0,
    kmeans_iters: int = 5,
) -> dict:
    """Time one partitioner on a fixed random token buffer.

    ``size_param`` is the hash bit count for ``"lsh"`` and the cluster count
    for ``"kmeans"``. Returns median/p10/p90 tokens-per-second over
    ``repeats`` timed runs (after one warmup); the token buffer is shared
    statistics-wise so the two methods see identical inputs for a seed.
    """
    rng = np.random.default_rng(seed)
    tokens = rng.standard_normal((n, d))
    if method == "lsh":
        norms = sample_norm_vectors(size_param, d, rng)
        run = lambda: lsh_assign(tokens, norms)  # noqa: E731
        k = norms.num_clusters
    elif method == "kmeans":
        run = lambda: kmeans_assign(tokens, size_param, max_iters=kmeans_iters, seed=seed)  # noqa: E731
        k = size_param
    else:
        raise PartitionError(f"unknown method {method!r}, expected 'lsh' or 'kmeans'")

    run()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    rates = np.sort(n / np.asarray(times))
    return {
        "method": method,
        "n": n,
        "d": d,
        "K": k,
        "median_tokens_per_sec": float(np.median(rates)),
        "p10": float(np.quantile(rates, 0.10)),
        "p90": float(np.quantile(rates, 0.90)),
    }
