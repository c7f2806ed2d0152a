"""Model assembly: config, build determinism, forward contracts, losses,
toy training, checkpoints."""

import numpy as np
import pytest

from pcnn import analysis, model
from pcnn.spectral import mix_at_snr, stft
from pcnn.tensor import Tensor

RNG = np.random.default_rng(55)


def tiny_config(**overrides):
    base = dict(frame_len=32, overlap=16, channels=4, num_pcb=1,
                attn_dim=2, gru_hidden=3, seed=3)
    base.update(overrides)
    return model.ModelConfig(**base)


def zero_bias_tensors(params):
    bias_suffixes = (".b", ".beta", ".bias", ".b1", ".b2", ".proj_b")
    for name, t in params.named_tensors():
        if name.endswith(bias_suffixes):
            t.data[...] = 0.0


# ---------------------------------------------------------------------------
# config


def test_config_defaults_and_derived_fields():
    cfg = model.ModelConfig()
    assert (cfg.frame_len, cfg.overlap, cfg.channels) == (512, 256, 64)
    assert cfg.alpha == 0.2
    assert cfg.attn_dim == 16   # channels // 4
    assert cfg.gru_hidden == 64


def test_config_validation_messages():
    with pytest.raises(ValueError, match="frame_len"):
        model.ModelConfig(frame_len=511)
    with pytest.raises(ValueError, match="overlap"):
        model.ModelConfig(overlap=512)
    with pytest.raises(ValueError, match="alpha"):
        model.ModelConfig(alpha=1.5)
    with pytest.raises(ValueError, match="num_pcb"):
        model.ModelConfig(num_pcb=0)
    with pytest.raises(ValueError, match="stft_frame"):
        model.ModelConfig(stft_frame=300)


def test_config_file_round_trip(tmp_path):
    cfg = tiny_config(alpha=0.3)
    path = tmp_path / "model.cfg"
    cfg.to_file(path)
    again = model.ModelConfig.from_file(path)
    assert again == cfg


def test_config_file_rejects_unknown_and_bad_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("channels = 8\nbogus_knob = 3\n")
    with pytest.raises(ValueError, match="unknown config key 'bogus_knob'"):
        model.ModelConfig.from_file(path)
    path.write_text("channels = eight\n")
    with pytest.raises(ValueError, match="cannot parse"):
        model.ModelConfig.from_file(path)
    path.write_text("channels = 8\nchannels = 9\n")
    with pytest.raises(ValueError, match="duplicate"):
        model.ModelConfig.from_file(path)


# ---------------------------------------------------------------------------
# build


def test_build_is_deterministic_per_seed():
    a = model.build(tiny_config())
    b = model.build(tiny_config())
    for (name_a, ta), (name_b, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert name_a == name_b
        np.testing.assert_array_equal(ta.data, tb.data)
    c = model.build(tiny_config(seed=4))
    assert any(not np.array_equal(ta.data, tc.data)
               for (_, ta), (_, tc) in zip(a.named_tensors(), c.named_tensors()))


def test_param_count_matches_closed_form_accounting():
    for cfg in (tiny_config(), model.toy_config(),
                model.ModelConfig(channels=16, num_pcb=3, gru_hidden=10)):
        assert model.build(cfg).param_count() == analysis.param_count(cfg)


def test_toy_build_within_budget():
    params = model.build(model.toy_config())
    assert params.param_count() <= 50_000


# ---------------------------------------------------------------------------
# forward


@pytest.mark.parametrize("m", [1, 100, 512, 16000])
def test_forward_preserves_length(m):
    params = model.build(tiny_config())
    out = model.forward(params, RNG.normal(size=m) * 0.3)
    assert out.shape == (m,)
    assert np.all(np.isfinite(out))


def test_forward_zero_input_zero_output_with_zero_biases():
    params = model.build(tiny_config())
    zero_bias_tensors(params)
    out = model.forward(params, np.zeros(300))
    np.testing.assert_array_equal(out, 0.0)


def test_forward_rejects_bad_input():
    params = model.build(tiny_config())
    with pytest.raises(ValueError, match="1-D"):
        model.forward(params, np.zeros((2, 5)))
    with pytest.raises(ValueError, match="non-empty"):
        model.forward(params, np.zeros(0))


# ---------------------------------------------------------------------------
# losses


def test_loss_time_cases():
    assert model.loss_time(np.ones(4), Tensor(np.ones(4))).item() == 0.0
    val = model.loss_time(np.array([1.0, 1.0]), Tensor(np.array([0.0, 0.0])))
    assert val.item() == 1.0
    x, y = RNG.normal(size=50), RNG.normal(size=50)
    assert model.loss_time(x, Tensor(y)).item() >= 0.0
    assert model.loss_time(x, Tensor(y)).item() == model.loss_time(y, Tensor(x)).item()
    with pytest.raises(ValueError, match="equal-length"):
        model.loss_time(np.ones(3), Tensor(np.ones(4)))


def test_loss_frequency_matches_fft_oracle():
    clean = RNG.normal(size=900)
    est = clean + 0.1 * RNG.normal(size=900)
    got = model.loss_frequency(clean, Tensor(est), frame=512, hop=256).item()
    mag_c = np.abs(stft(clean, 512, 256).values)
    mag_e = np.abs(stft(est, 512, 256).values)
    expected = float(np.mean((mag_e - mag_c) ** 2))
    assert abs(got - expected) <= 1e-12 * max(expected, 1.0)


def test_loss_frequency_two_frame_toy_signal():
    # tiny frame size keeps the direct DFT oracle trivial to evaluate
    x = RNG.normal(size=12)
    y = RNG.normal(size=12)
    got = model.loss_frequency(x, Tensor(y), frame=8, hop=4).item()
    mag_x = np.abs(stft(x, 8, 4).values)
    mag_y = np.abs(stft(y, 8, 4).values)
    assert abs(got - float(np.mean((mag_y - mag_x) ** 2))) <= 1e-14


def test_loss_total_combination_and_exact_zero():
    clean = RNG.normal(size=700)
    est = RNG.normal(size=700)
    lf = model.loss_frequency(clean, Tensor(est)).item()
    lt = model.loss_time(clean, Tensor(est)).item()
    total = model.loss_total(clean, Tensor(est), 0.2).item()
    assert abs(total - (0.2 * lf + 0.8 * lt)) <= 1e-15
    assert model.loss_total(clean, Tensor(clean.copy())).item() == 0.0
    assert model.loss_total(clean, Tensor(est), 0.0).item() == lt
    with pytest.raises(ValueError, match="alpha"):
        model.loss_total(clean, Tensor(est), 1.2)


# ---------------------------------------------------------------------------
# toy training


def quick_clip(n=600):
    t = np.arange(n) / 16000.0
    clean = 0.4 * np.sin(2 * np.pi * 330.0 * t)
    noisy = mix_at_snr(clean, np.random.default_rng(2).standard_normal(n), 3.0)
    return clean, noisy


def test_train_toy_zero_lr_is_flat():
    params = model.build(tiny_config())
    clean, noisy = quick_clip()
    losses = model.train_toy(params, clean, noisy, steps=4, lr=0.0)
    assert len(losses) == 4
    assert losses.count(losses[0]) == 4


def test_train_toy_deterministic_and_decreasing():
    clean, noisy = quick_clip()
    runs = []
    for _ in range(2):
        params = model.build(tiny_config())
        runs.append(model.train_toy(params, clean, noisy, steps=12, lr=1e-3))
    assert runs[0] == runs[1]
    assert runs[0][-1] < runs[0][0]


def test_train_toy_divergence_reports_step():
    params = model.build(tiny_config())
    params.tensor("encoder.conv_in.w").data[...] = np.nan
    clean, noisy = quick_clip()
    with pytest.raises(model.TrainingDiverged, match="step 1") as info:
        model.train_toy(params, clean, noisy, steps=3, lr=1e-3)
    assert info.value.step == 1


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    params = model.build(tiny_config())
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    model.save(params, first)
    loaded = model.load(first)
    model.save(loaded, second)
    assert first.read_bytes() == second.read_bytes()

    x = RNG.normal(size=400) * 0.2
    np.testing.assert_array_equal(model.forward(params, x), model.forward(loaded, x))


def test_checkpoint_rejects_corruption(tmp_path):
    params = model.build(tiny_config())
    path = tmp_path / "m.ckpt"
    model.save(params, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="magic"):
        model.load(bad)


def test_checkpoint_rejects_version_and_shape_mismatch(tmp_path):
    params = model.build(tiny_config())
    path = tmp_path / "m.ckpt"
    model.save(params, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    (tmp_path / "v.ckpt").write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        model.load(tmp_path / "v.ckpt")
