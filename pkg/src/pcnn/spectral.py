"""STFT/iSTFT, SNR mixing, and segmental SNR evaluation.

The transform pads half a frame of zeros on each side, applies a periodic
Hann window at 50% hop, and reconstructs with window-squared normalization,
which keeps the round trip exact over the whole original signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pcnn.framing import FrameSpec, segment

__all__ = ["Spectrogram", "stft", "istft", "mix_at_snr", "ssnr", "hann_window"]

SSNR_FLOOR_DB = -10.0
SSNR_CEIL_DB = 35.0


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (satisfies constant overlap-add at hop n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    """One-sided complex spectrogram, frames along axis 0."""

    values: np.ndarray  # complex128 [T, frame_size//2 + 1]
    frame_size: int
    hop: int
    num_samples: int

    def __post_init__(self):
        bins = self.frame_size // 2 + 1
        if self.values.ndim != 2 or self.values.shape[1] != bins:
            raise ValueError(
                f"spectrogram must have {bins} bins for frame size {self.frame_size}, "
                f"got shape {self.values.shape}"
            )

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)


def stft(x: np.ndarray, frame_size: int = 512, hop: int = 256,
         window: str = "hann") -> Spectrogram:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("stft input must be a non-empty 1-D waveform")
    if frame_size < 2 or (frame_size & (frame_size - 1)) != 0:
        raise ValueError(f"frame_size must be a power of two, got {frame_size}")
    if not 1 <= hop <= frame_size:
        raise ValueError(f"hop must be in [1, {frame_size}], got {hop}")
    if window != "hann":
        raise ValueError(f"unsupported window {window!r}")

    pad = frame_size // 2
    padded = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    frames = segment(padded, FrameSpec(frame_size, frame_size - hop))[0]
    win = hann_window(frame_size)
    values = np.fft.rfft(frames * win, axis=1)
    return Spectrogram(values, frame_size, hop, x.shape[0])


def istft(spec: Spectrogram) -> np.ndarray:
    n = spec.frame_size
    if not 1 <= spec.hop <= n:
        raise ValueError(f"inconsistent hop {spec.hop} for frame size {n}")
    win = hann_window(n)
    frames = np.fft.irfft(spec.values, n=n, axis=1) * win
    n_frames = frames.shape[0]
    span = (n_frames - 1) * spec.hop + n
    acc = np.zeros(span)
    wsq = np.zeros(span)
    for i in range(n_frames):
        start = i * spec.hop
        acc[start:start + n] += frames[i]
        wsq[start:start + n] += win * win
    pad = n // 2
    if span < pad + spec.num_samples:
        raise ValueError(
            f"spectrogram covers {span} samples, cannot restore {spec.num_samples}"
        )
    region = slice(pad, pad + spec.num_samples)
    scale = wsq[region]
    if scale.size and scale.min() <= 1e-12:
        raise ValueError("window-squared sum vanishes inside the signal region")
    return acc[region] / scale


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Scale the noise so the mixture hits ``snr_db`` exactly."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape or clean.ndim != 1:
        raise ValueError(
            f"clean and noise must be equal-length 1-D signals, got {clean.shape} and {noise.shape}"
        )
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    p_clean = float(np.mean(clean * clean))
    p_noise = float(np.mean(noise * noise))
    if p_noise == 0.0:
        raise ValueError("noise signal is silent")
    if p_clean == 0.0:
        raise ValueError("clean signal is silent")
    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + scale * noise


def ssnr(clean: np.ndarray, estimate: np.ndarray, frame: int = 512, hop: int = 256,
         clip_db: tuple[float, float] = (SSNR_FLOOR_DB, SSNR_CEIL_DB)) -> float:
    """Mean of clipped per-frame SNRs in dB; silent clean frames are skipped."""
    clean = np.asarray(clean, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if clean.shape != estimate.shape or clean.ndim != 1:
        raise ValueError(
            f"signals must be equal-length 1-D, got {clean.shape} and {estimate.shape}"
        )
    lo, hi = clip_db
    m = clean.shape[0]
    starts = range(0, m - frame + 1, hop) if m >= frame else [0]
    length = frame if m >= frame else m
    vals = []
    for start in starts:
        s = clean[start:start + length]
        e = s - estimate[start:start + length]
        p_sig = float(s @ s)
        if p_sig == 0.0:
            continue
        p_err = float(e @ e)
        if p_err == 0.0:
            vals.append(hi)
            continue
        vals.append(min(hi, max(lo, 10.0 * math.log10(p_sig / p_err))))
    if not vals:
        raise ValueError("clean signal is silent in every frame")
    return float(np.mean(vals))
