"""Backend selection for the hot convolution kernels.

Set ``PCNN_KERNELS=numpy`` to force the pure-numpy fallback, ``numba`` to
require the JIT path, or leave unset/``auto`` to use numba when available.
The choice is made once at import time; ``benchmarks/bench_kernels.py``
compares the two implementations directly.
"""

from __future__ import annotations

import os

_choice = os.environ.get("PCNN_KERNELS", "auto").strip().lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"PCNN_KERNELS must be auto, numba, or numpy, not {_choice!r}")

if _choice == "numpy":
    from pcnn.kernels import reference as _impl
else:
    try:
        from pcnn.kernels import jit as _impl
    except ImportError:
        if _choice == "numba":
            raise ImportError("PCNN_KERNELS=numba but numba is not importable")
        from pcnn.kernels import reference as _impl

BACKEND = _impl.BACKEND
conv2d_forward = _impl.conv2d_forward
conv2d_backward_weight = _impl.conv2d_backward_weight
conv2d_backward_input = _impl.conv2d_backward_input

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward_weight",
    "conv2d_backward_input",
]
