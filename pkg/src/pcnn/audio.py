"""Mono WAV reading and writing (PCM16 and float32)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

SUPPORTED = ("pcm16", "float32")


def read_wav(path) -> tuple[np.ndarray, int, str]:
    """Returns (samples as float64 in [-1, 1], sample rate, encoding)."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.ndim} channels; "
                         "downmix before enhancing")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0, int(rate), "pcm16"
    if data.dtype == np.float32:
        return data.astype(np.float64), int(rate), "float32"
    raise ValueError(f"{path}: unsupported sample format {data.dtype}; "
                     "use PCM16 or float32 WAV")


def write_wav(path, samples: np.ndarray, rate: int, encoding: str) -> int:
    """Write samples; returns how many were clipped to fit the encoding."""
    samples = np.asarray(samples, dtype=np.float64)
    if encoding == "pcm16":
        ints = np.rint(samples * 32768.0)
        clipped = int(np.count_nonzero((ints < -32768) | (ints > 32767)))
        wavfile.write(path, rate, np.clip(ints, -32768, 32767).astype(np.int16))
        return clipped
    if encoding == "float32":
        wavfile.write(path, rate, samples.astype(np.float32))
        return 0
    raise ValueError(f"unsupported encoding {encoding!r}; expected one of {SUPPORTED}")
