"""Single-file model checkpoints.

Layout, all little-endian: magic ``DFCK``, u32 format version, u32 byte
length of the flat key=value config text followed by that text (UTF-8),
u32 entry count, then per entry a u32 name length, the name, and the
array in the tensor stream format. Entries cover every learnable tensor
plus the non-learnable state a forward depends on (normalization running
stats, hash hyperplanes), so a save/load pair reproduces eval-mode
outputs bit for bit at f32.
"""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .model import Model, build_model, config_from_text, config_to_text, iter_state
from .tensor_io import TensorFormatError, read_tensor_stream, write_tensor_stream

MAGIC = b"DFCK"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint or config mismatch."""


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def write_checkpoint_stream(stream: BinaryIO, model: Model) -> None:
    entries = list(iter_state(model))
    text = config_to_text(model.config).encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<I", VERSION))
    stream.write(struct.pack("<I", len(text)))
    stream.write(text)
    stream.write(struct.pack("<I", len(entries)))
    for name, arr, _ in entries:
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<I", len(encoded)))
        stream.write(encoded)
        write_tensor_stream(stream, arr)


def read_checkpoint_stream(stream: BinaryIO):
    """Returns (config, {name: f32 array})."""
    if _read_exact(stream, 4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", _read_exact(stream, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (text_len,) = struct.unpack("<I", _read_exact(stream, 4))
    cfg = config_from_text(_read_exact(stream, text_len).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    state = {}
    order = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(stream, 4))
        name = _read_exact(stream, name_len).decode("utf-8")
        try:
            state[name] = read_tensor_stream(stream)
        except TensorFormatError as exc:
            raise CheckpointError(f"entry {name!r}: {exc}") from exc
        order.append(name)
    return cfg, state, order


def save_checkpoint(path: str, model: Model) -> None:
    with open(path, "wb") as fh:
        write_checkpoint_stream(fh, model)


def load_checkpoint(path: str, expected_config=None) -> Model:
    """Rebuild a model from a checkpoint file.

    If ``expected_config`` is given, the stored config must match it
    exactly; the error names both sides otherwise.
    """
    with open(path, "rb") as fh:
        cfg, state, order = read_checkpoint_stream(fh)
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    if expected_config is not None and cfg != expected_config:
        raise CheckpointError(
            f"checkpoint config (name={cfg.name}, channels={cfg.channels}, "
            f"depths={cfg.depths}) does not match expected "
            f"(name={expected_config.name}, channels={expected_config.channels}, "
            f"depths={expected_config.depths})"
        )
    model = build_model(cfg, seed=0)
    slots = list(iter_state(model))
    names = [n for n, _, _ in slots]
    if names != order:
        missing = set(names) - set(order)
        extra = set(order) - set(names)
        raise CheckpointError(
            f"checkpoint entries do not line up with the rebuilt model "
            f"(missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]})"
        )
    for name, arr, _ in slots:
        stored = state[name]
        if stored.shape != arr.shape:
            raise CheckpointError(
                f"entry {name!r}: stored shape {stored.shape} != model shape {arr.shape}"
            )
        arr[...] = stored.astype(arr.dtype)
    return model
