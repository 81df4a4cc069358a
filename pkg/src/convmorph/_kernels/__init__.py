"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the pure NumPy
fallback is used otherwise. Set CONVMORPH_BACKEND=python or =cython to force
a backend (forcing cython raises if the extension was not built).
"""
import os

_forced = os.environ.get("CONVMORPH_BACKEND")
if _forced not in (None, "", "cython", "python"):
    raise ImportError(f"CONVMORPH_BACKEND must be 'cython' or 'python', got {_forced!r}")

if _forced == "python":
    from . import _py as _impl

    BACKEND = "python"
else:
    try:
        from . import _conv_cy as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        from . import _py as _impl

        BACKEND = "python"

import numpy as _np


def conv2d_same(f, b):
    return _impl.conv2d_same(_np.ascontiguousarray(f), _np.ascontiguousarray(b))


def conv2d_compose(f2, f1):
    return _impl.conv2d_compose(_np.ascontiguousarray(f2), _np.ascontiguousarray(f1))


conv2d_same.__doc__ = _impl.conv2d_same.__doc__
conv2d_compose.__doc__ = _impl.conv2d_compose.__doc__

__all__ = ["BACKEND", "conv2d_same", "conv2d_compose"]
