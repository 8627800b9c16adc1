"""Dual-branch vision backbone with partition-wise attention, on numpy.

Attribute access is lazy so the CLI can pin BLAS thread pools through
environment variables before anything pulls numpy in.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": ".tensor",
    "constant": ".tensor",
    "no_grad": ".tensor",
    "conv2d": ".conv",
    "grad_check": ".gradcheck",
    "ModelConfig": ".model",
    "PRESETS": ".model",
    "get_preset": ".model",
    "build_model": ".model",
    "forward": ".model",
    "count_params": ".model",
    "count_flops": ".flops",
    "save_checkpoint": ".checkpoint",
    "load_checkpoint": ".checkpoint",
    "make_shapes": ".data",
    "train_toy": ".train",
    "set_default_dtype": ".precision",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(importlib.import_module(module, __name__), name)
