"""Waveform segmentation into overlapped frames and its inverse.

Frame count follows F = ceil((M - L) / (L - S) + 1), clamped to one frame
for signals no longer than L. S is the overlap between consecutive frames,
so the hop is L - S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["FrameSpec", "frame_count", "segment", "overlap_add"]


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int
    overlap: int

    def __post_init__(self):
        if self.frame_len < 1:
            raise ValueError(f"frame_len must be >= 1, got {self.frame_len}")
        if not 0 <= self.overlap < self.frame_len:
            raise ValueError(
                f"overlap must satisfy 0 <= S < L, got S={self.overlap}, L={self.frame_len}"
            )

    @property
    def hop(self) -> int:
        return self.frame_len - self.overlap


def frame_count(num_samples: int, spec: FrameSpec) -> int:
    if num_samples < 1:
        raise ValueError(f"signal length must be >= 1, got {num_samples}")
    if num_samples <= spec.frame_len:
        return 1
    return math.ceil((num_samples - spec.frame_len) / spec.hop + 1)


def segment(x: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Split a waveform into frames, zero-padding the tail; returns [1, F, L]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
    n = frame_count(x.shape[0], spec)
    frames = np.zeros((1, n, spec.frame_len))
    for i in range(n):
        start = i * spec.hop
        chunk = x[start:start + spec.frame_len]
        frames[0, i, :chunk.shape[0]] = chunk
    return frames


def overlap_add(frames: np.ndarray, spec: FrameSpec, num_samples: int) -> np.ndarray:
    """Merge [1, F, L] frames back into a waveform of ``num_samples``.

    Every sample is the mean over the frames covering it, so
    overlap_add(segment(x)) reproduces x exactly for rectangular frames.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] != 1:
        raise ValueError(f"frames must have shape [1, F, L], got {frames.shape}")
    n, length = frames.shape[1], frames.shape[2]
    if length != spec.frame_len:
        raise ValueError(f"frame length {length} does not match spec L={spec.frame_len}")
    span = (n - 1) * spec.hop + length
    if num_samples > span:
        raise ValueError(f"requested {num_samples} samples but frames cover only {span}")
    acc = np.zeros(span)
    counts = np.zeros(span)
    for i in range(n):
        start = i * spec.hop
        acc[start:start + length] += frames[0, i]
        counts[start:start + length] += 1.0
    return acc[:num_samples] / counts[:num_samples]
