"""Process tuning helpers.

The model runs thousands of small numpy contractions interleaved with the
compiled convolution kernels; letting BLAS spin up its own thread pool for
matrices this small only causes contention with the kernel threads. Long
loops (training, gradient checks) therefore pin BLAS to one thread.
"""

from __future__ import annotations

from contextlib import contextmanager, nullcontext

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@contextmanager
def single_threaded_blas():
    ctx = threadpool_limits(limits=1) if threadpool_limits is not None else nullcontext()
    with ctx:
        yield
