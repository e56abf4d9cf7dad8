"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly, unless the environment
variable ``SPANTAG_DISABLE_JIT`` is set to a truthy value, in which case the
pure-numpy backend is used. Both backends satisfy the same contracts and are
tested against each other.
"""
import os

from . import _numpy as numpy_backend

_DISABLED = os.environ.get("SPANTAG_DISABLE_JIT", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by SPANTAG_DISABLE_JIT")
    from . import _numba as numba_backend
except ImportError:
    numba_backend = None

backend = numba_backend if numba_backend is not None else numpy_backend
BACKEND_NAME = "numba" if numba_backend is not None else "numpy"

layer_norm_forward = backend.layer_norm_forward
layer_norm_backward = backend.layer_norm_backward
softmax_rows = backend.softmax_rows
softmax_rows_backward = backend.softmax_rows_backward
segment_max = backend.segment_max
segment_max_backward = backend.segment_max_backward
scatter_add_rows = backend.scatter_add_rows

__all__ = [
    "BACKEND_NAME",
    "backend",
    "numpy_backend",
    "numba_backend",
    "layer_norm_forward",
    "layer_norm_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "segment_max",
    "segment_max_backward",
    "scatter_add_rows",
]
