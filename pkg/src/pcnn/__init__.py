"""Parallel conformer network for monaural speech enhancement.

Pure numpy/numba implementation: forward pass, reverse-mode gradients,
waveform framing, spectral utilities, and a closed-form architecture
analysis toolkit, plus a batch CLI.
"""

from pcnn.tensor import GradTape, Tensor, backward, finite_difference_gradient

__version__ = "0.1.0"

__all__ = ["Tensor", "GradTape", "backward", "finite_difference_gradient", "__version__"]
