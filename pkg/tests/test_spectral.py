"""STFT round trips, SNR mixing exactness, and segmental SNR conventions."""

import math

import numpy as np
import pytest

from pcnn.spectral import Spectrogram, hann_window, istft, mix_at_snr, ssnr, stft

RNG = np.random.default_rng(31)


def measured_snr_db(clean, mixture):
    noise = mixture - clean
    return 10.0 * math.log10(float(clean @ clean) / float(noise @ noise))


# ---------------------------------------------------------------------------
# stft / istft


def test_stft_zero_signal():
    spec = stft(np.zeros(2000))
    assert spec.values.shape[1] == 257
    np.testing.assert_array_equal(spec.values, 0.0)


def test_stft_validation():
    with pytest.raises(ValueError, match="non-empty"):
        stft(np.array([]))
    with pytest.raises(ValueError, match="power of two"):
        stft(np.ones(100), frame_size=300)
    with pytest.raises(ValueError, match="hop"):
        stft(np.ones(100), frame_size=256, hop=512)


def test_sinusoid_energy_concentrates_at_its_bin():
    n, k = 512, 40
    t = np.arange(8000)
    x = np.sin(2.0 * np.pi * k * t / n)
    spec = stft(x, frame_size=n, hop=n // 2)
    # interior frame: Hann leakage stays inside bins k-1..k+1
    power = np.abs(spec.values[8]) ** 2
    frame_energy = power[0] + power[-1] + 2.0 * power[1:-1].sum()
    local = power[k - 1] + power[k] + power[k + 1]
    assert 2.0 * local / frame_energy >= 0.90
    assert power[k] == power.max()


def test_parseval_energy_bookkeeping():
    x = RNG.normal(size=4000)
    n = 512
    spec = stft(x, frame_size=n, hop=256)
    win = hann_window(n)
    pad = np.concatenate([np.zeros(n // 2), x, np.zeros(n // 2)])
    for i in range(spec.values.shape[0]):
        frame = np.zeros(n)
        chunk = pad[i * 256:i * 256 + n]
        frame[:chunk.size] = chunk
        time_energy = float(np.sum((frame * win) ** 2))
        p = np.abs(spec.values[i]) ** 2
        freq_energy = (p[0] + p[-1] + 2.0 * p[1:-1].sum()) / n
        assert abs(time_energy - freq_energy) <= 1e-8 * max(time_energy, 1e-12)


def test_istft_round_trip_one_second():
    x = RNG.normal(size=16000)
    back = istft(stft(x))
    assert back.shape == x.shape
    assert np.abs(back - x).max() <= 1e-8


def test_istft_round_trip_short_and_offsize():
    for m in (100, 512, 777):
        x = RNG.normal(size=m)
        back = istft(stft(x))
        assert np.abs(back - x).max() <= 1e-8


def test_istft_zero_and_linearity():
    x = RNG.normal(size=3000)
    y = RNG.normal(size=3000)
    sa, sb = stft(x), stft(y)
    zero = istft(Spectrogram(np.zeros_like(sa.values), 512, 256, 3000))
    np.testing.assert_array_equal(zero, 0.0)
    combined = istft(Spectrogram(sa.values + sb.values, 512, 256, 3000))
    np.testing.assert_allclose(combined, istft(sa) + istft(sb), atol=1e-10)


def test_spectrogram_metadata_validation():
    with pytest.raises(ValueError, match="bins"):
        Spectrogram(np.zeros((4, 100), dtype=complex), 512, 256, 1000)


# ---------------------------------------------------------------------------
# mixing


def test_mix_at_zero_snr_equalizes_power():
    clean = RNG.normal(size=8000)
    noise = RNG.normal(size=8000) * 3.0
    mixture = mix_at_snr(clean, noise, 0.0)
    scaled = mixture - clean
    assert abs(float(clean @ clean) - float(scaled @ scaled)) <= 1e-10 * float(clean @ clean)


@pytest.mark.parametrize("snr", [-5.0, 0.0, 3.7, 10.0])
def test_mix_hits_requested_snr(snr):
    clean = RNG.normal(size=4000)
    noise = RNG.uniform(-1, 1, size=4000)
    mixture = mix_at_snr(clean, noise, snr)
    assert abs(measured_snr_db(clean, mixture) - snr) <= 1e-6


def test_mix_rejects_bad_inputs():
    x = RNG.normal(size=100)
    with pytest.raises(ValueError, match="finite"):
        mix_at_snr(x, x, math.inf)
    with pytest.raises(ValueError, match="noise signal is silent"):
        mix_at_snr(x, np.zeros(100), 0.0)
    with pytest.raises(ValueError, match="clean signal is silent"):
        mix_at_snr(np.zeros(100), x, 0.0)
    with pytest.raises(ValueError, match="equal-length"):
        mix_at_snr(x, x[:50], 0.0)


# ---------------------------------------------------------------------------
# segmental SNR


def test_ssnr_perfect_estimate_hits_ceiling():
    x = RNG.normal(size=4000)
    assert ssnr(x, x) == 35.0


def test_ssnr_sign_flip_is_minus_six_db():
    # error power is 4x the signal power: 10*log10(1/4), inside the clip range
    x = RNG.normal(size=4000)
    expected = 10.0 * math.log10(0.25)
    assert abs(ssnr(x, -x) - expected) <= 1e-9


def test_ssnr_floor_clips_large_errors():
    x = RNG.normal(size=4000)
    # error power 100x signal power -> -20 dB, clipped to the -10 floor
    assert ssnr(x, x + 10.0 * x) == -10.0


def test_ssnr_white_noise_near_zero_db():
    clean = RNG.normal(size=160000)
    err = RNG.normal(size=160000)
    err *= math.sqrt(float(clean @ clean) / float(err @ err))
    assert abs(ssnr(clean, clean + err)) <= 1.0


def test_ssnr_scale_invariance():
    clean = RNG.normal(size=8000)
    est = clean + 0.3 * RNG.normal(size=8000)
    assert abs(ssnr(clean, est) - ssnr(5.0 * clean, 5.0 * est)) <= 1e-9


def test_ssnr_skips_silent_frames_and_rejects_silence():
    clean = np.zeros(2048)
    clean[1024:] = RNG.normal(size=1024)
    est = clean + 0.1 * RNG.normal(size=2048)
    val = ssnr(clean, est, frame=512, hop=512)
    assert math.isfinite(val)
    with pytest.raises(ValueError, match="silent"):
        ssnr(np.zeros(2048), est)
