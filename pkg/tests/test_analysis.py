"""Closed-form accounting against brute-force oracles and known table values."""

import numpy as np
import pytest

from pcnn import analysis, blocks, model, ops
from pcnn.tensor import Tensor


# ---------------------------------------------------------------------------
# receptive field


@pytest.mark.parametrize("kernel,dilation,expected", [(3, 4, 9), (9, 1, 9), (3, 1, 3), (5, 3, 13)])
def test_receptive_field_closed_form(kernel, dilation, expected):
    assert analysis.receptive_field(kernel, dilation) == expected


def test_receptive_field_branch_union():
    assert analysis.receptive_field_branches(3, (1, 2, 4)) == 9


def test_receptive_field_validation():
    with pytest.raises(ValueError, match="odd"):
        analysis.receptive_field(4, 1)
    with pytest.raises(ValueError, match="dilation"):
        analysis.receptive_field(3, 0)


def brute_force_span(kernel, dilation):
    taps = sorted({i * dilation for i in range(kernel)})
    return taps[-1] - taps[0] + 1


@pytest.mark.parametrize("kernel", [1, 3, 5, 7, 9])
@pytest.mark.parametrize("dilation", [1, 2, 3, 4])
def test_receptive_field_matches_enumeration(kernel, dilation):
    assert analysis.receptive_field(kernel, dilation) == brute_force_span(kernel, dilation)


# ---------------------------------------------------------------------------
# sampling rate


def test_table_sampling_rates():
    with_mult, distinct = analysis.sampling_rate((1, 2, 4), 3)
    assert with_mult == pytest.approx(27 / 81)
    assert distinct == pytest.approx(25 / 81)

    single, single_distinct = analysis.sampling_rate((4,), 3)
    assert single == pytest.approx(9 / 81)
    assert single_distinct == pytest.approx(9 / 81)

    dense, dense_distinct = analysis.sampling_rate((1,), 9)
    assert dense == 1.0 and dense_distinct == 1.0


@pytest.mark.parametrize("kernel", [1, 3, 5])
@pytest.mark.parametrize("dilations", [(1,), (2,), (1, 2), (1, 2, 4), (1, 3, 4)])
def test_sampling_rate_matches_tap_enumeration(kernel, dilations):
    rf = max(brute_force_span(kernel, d) for d in dilations)
    union = set()
    for d in dilations:
        half = (kernel - 1) // 2
        line = [(i - half) * d for i in range(kernel)]
        union |= {(a, b) for a in line for b in line}
    with_mult, distinct = analysis.sampling_rate(dilations, kernel)
    assert with_mult == pytest.approx(len(dilations) * kernel ** 2 / rf ** 2)
    assert distinct == pytest.approx(len(union) / rf ** 2)


def test_format_rate_strings():
    assert analysis.format_rate(27 / 81) == "33.33%"
    assert analysis.format_rate(9 / 81) == "11.11%"
    assert analysis.format_rate(1.0) == "100%"
    assert analysis.format_rate(25 / 81) == "30.86%"


# ---------------------------------------------------------------------------
# parameter counting


def test_conv_param_examples():
    # 1x1 conv with 64 channels in and out, plus bias
    assert analysis.conv_params(64, 64, 1, 1) == 4160
    assert analysis.conv_params(8, 1, 3, 3, bias=False) == 72


def test_dense_vs_dilated_weight_ratio_is_exactly_nine():
    scales = {v.name: v for v in analysis.table1_variants()}
    assert scales["dense"].weight_scale_split == 9.0
    assert analysis.format_scale(scales["dense"].weight_scale_split) == "9.00N"
    assert scales["mbdc"].weight_scale_split == 1.0
    assert scales["mbdc"].weight_scale_full == 3.0
    assert scales["dilated"].weight_scale_split == 1.0


def test_param_count_equals_built_model():
    for cfg in (model.toy_config(),
                model.ModelConfig(channels=6, num_pcb=2, attn_dim=3, gru_hidden=4),
                model.ModelConfig()):
        assert analysis.param_count(cfg) == model.build(cfg).param_count()


def test_param_breakdown_totals():
    cfg = model.toy_config()
    parts = analysis.param_breakdown(cfg)
    assert parts["total"] == (parts["encoder"] + parts["pcb_all"]
                              + parts["masking"] + parts["decoder"])
    assert parts["pcb_all"] == cfg.num_pcb * parts["pcb_each"]


# ---------------------------------------------------------------------------
# attention cost


def test_attention_cost_singleton_ratio_is_one():
    cost = analysis.attention_cost(1, 1, 1, 1)
    assert cost.asymptotic_ratio == 1.0


def test_attention_cost_reference_dims():
    c, t, f = 64, 100, 128
    cost = analysis.attention_cost(c, t, f, 16)
    expected = (c * c + t * t + f * f) / (c * c * t * f + c * t * t * f + c * t * f * f)
    assert abs(cost.asymptotic_ratio - expected) <= 1e-12 * expected
    assert cost.axiswise_full_sa_macs == c * c * t * f + c * t * t * f + c * t * f * f
    assert cost.flattened_full_sa_macs == (t * f) ** 2 * c


def test_factorized_macs_match_instrumented_counter():
    rng = np.random.default_rng(12)
    for _ in range(10):
        c, t, f = (int(rng.integers(1, 129)) for _ in range(3))
        d = int(rng.integers(1, 9))
        p = blocks.init_ctfa(np.random.default_rng(0), c, d)
        x = Tensor(rng.normal(size=(c, t, f)))
        with ops.count_macs() as counter:
            blocks.ctfa_attention_maps(p, x)
        closed = analysis.factorized_map_macs(c, t, f, d)
        assert abs(counter.total - closed) <= 0.05 * closed


# ---------------------------------------------------------------------------
# report


def test_report_contains_table_values():
    text = analysis.analyze(model.ModelConfig()).render()
    for token in ("9x9", "33.33%", "11.11%", "100%", "9.00N", "30.86%"):
        assert token in text, token


def test_report_deterministic():
    a = analysis.analyze(model.ModelConfig()).render()
    b = analysis.analyze(model.ModelConfig()).render()
    assert a == b
