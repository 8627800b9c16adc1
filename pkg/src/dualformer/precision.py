"""Global float precision switch.

Everything runs in float32 by default. Gradient audits flip the default to
float64 so finite differences have enough headroom; the switch only affects
tensors created after the call, existing tensors keep their dtype.
"""
from __future__ import annotations

import contextlib

import numpy as np

_NAMES = {"f32": np.float32, "f64": np.float64}
_default = np.float32


def set_default_dtype(name) -> None:
    """Set the default float dtype. Accepts 'f32'/'f64' or a numpy dtype."""
    global _default
    if isinstance(name, str):
        if name not in _NAMES:
            raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_NAMES)}")
        _default = _NAMES[name]
        return
    dt = np.dtype(name)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}, expected float32 or float64")
    _default = dt.type


def default_dtype():
    return _default


def dtype_name() -> str:
    return "f64" if _default == np.float64 else "f32"


@contextlib.contextmanager
def precision(name):
    """Temporarily switch the default dtype. Used by tests and the grad audit."""
    prev = _default
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(prev)
