"""Backend selection for the wave-evaluation kernels.

The compiled extension is used when importable; set EULERCI_PURE_PY=1 to force
the numpy reference implementation (slower, same results).
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("EULERCI_PURE_PY"):
    try:
        from . import _kernels_cy as _impl_cy
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        _impl = _impl_cy


def eval_waves_points(*args, **kwargs):
    # point evaluation is numpy-bound either way; only the block sweep is compiled
    return _kernels_py.eval_waves_points(*args, **kwargs)


def eval_waves_block(*args, **kwargs):
    return _impl.eval_waves_block(*args, **kwargs)


def use(backend):
    """Switch backend by name ('python' or 'compiled'); returns the active name."""
    global BACKEND, _impl
    if backend == "python":
        BACKEND, _impl = "python", _kernels_py
    elif backend == "compiled":
        from . import _kernels_cy  # raises ImportError if unavailable

        BACKEND, _impl = "compiled", _kernels_cy
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return BACKEND
