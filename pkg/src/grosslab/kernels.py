"""Kernel dispatch: compiled extension when available, pure Python otherwise.

Set ``GROSSLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("GROSSLAB_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels
    else:
        BACKEND = "cython"
else:
    _impl = _pykernels

enumerate_states = _impl.enumerate_states
raise_table = _impl.raise_table

__all__ = ["BACKEND", "enumerate_states", "raise_table"]
