"""Synthetic four-class shape images for end-to-end training checks.

Classes: 0 circle, 1 square, 2 triangle, 3 cross. Each image is one
shape on a darker background with jittered center, size, rotation and
colors, plus pixel noise, standardized per channel with dataset
statistics. Same (n, seed, size) always yields the same bits.
"""
from __future__ import annotations

import numpy as np

from . import precision

CLASS_NAMES = ("circle", "square", "triangle", "cross")
NUM_CLASSES = len(CLASS_NAMES)


def _shape_mask(label: int, dx, dy, s: float):
    if label == 0:
        return dx * dx + dy * dy <= s * s
    if label == 1:
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.82 * s
    if label == 2:
        # apex up: width grows linearly from apex (-s) to base (0.7s)
        span = 1.7 * s
        half_w = np.clip((dy + s) / span, 0.0, 1.0) * 0.95 * s
        return (dy >= -s) & (dy <= 0.7 * s) & (np.abs(dx) <= half_w)
    if label == 3:
        bar = 0.3 * s
        return ((np.abs(dx) <= bar) & (np.abs(dy) <= s)) | (
            (np.abs(dy) <= bar) & (np.abs(dx) <= s)
        )
    raise ValueError(f"no shape for label {label}")


def make_shapes(n: int, seed: int = 0, size: int = 32):
    """Returns (images (n, 3, size, size), labels (n,) int64), classes balanced."""
    if n < 2 * NUM_CLASSES or n % NUM_CLASSES:
        raise ValueError(
            f"n must be a multiple of {NUM_CLASSES} and at least {2 * NUM_CLASSES}, got {n}"
        )
    if size < 16:
        raise ValueError(f"size must be at least 16, got {size}")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((n, 3, size, size), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    unit = size / 32.0
    for i in range(n):
        label = i % NUM_CLASSES
        cy, cx = size / 2 + rng.uniform(-4, 4, size=2) * unit
        s = rng.uniform(6.5, 10.0) * unit
        theta = rng.uniform(-0.35, 0.35)
        fg = rng.uniform(0.6, 1.0, size=3)
        bg = rng.uniform(0.0, 0.25, size=3)
        noise = rng.normal(0.0, 0.05, size=(3, size, size))
        dy, dx = ys - cy, xs - cx
        if label != 0:
            c, sn = np.cos(theta), np.sin(theta)
            dx, dy = c * dx - sn * dy, sn * dx + c * dy
        mask = _shape_mask(label, dx, dy, s).astype(np.float64)
        img = bg[:, None, None] + (fg - bg)[:, None, None] * mask[None] + noise
        images[i] = np.clip(img, 0.0, 1.0)
        labels[i] = label
    mean = images.mean(axis=(0, 2, 3), keepdims=True)
    std = images.std(axis=(0, 2, 3), keepdims=True) + 1e-8
    images = (images - mean) / std
    return images.astype(precision.default_dtype()), labels


def train_val_split(images, labels, val_fraction: float = 0.2, seed: int = 0):
    """Deterministic stratified split; returns (train_x, train_y, val_x, val_y).

    The validation set takes the same fraction from every class so tiny
    splits stay balanced.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        rows = rows[rng.permutation(len(rows))]
        n_val = max(1, int(round(len(rows) * val_fraction)))
        if n_val >= len(rows):
            raise ValueError(
                f"split leaves class {cls} without training rows "
                f"({len(rows)} samples, {n_val} requested for validation)"
            )
        val_idx.append(rows[:n_val])
        train_idx.append(rows[n_val:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return images[train_idx], labels[train_idx], images[val_idx], labels[val_idx]
