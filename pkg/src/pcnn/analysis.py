"""Closed-form architecture accounting: receptive fields, tap sampling rates,
parameter counts, and attention cost comparisons.

Everything here is computed from formulas, never by instantiating a model;
the test suite cross-checks the counts against the actual built parameter
set and against brute-force tap enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

from pcnn.blocks import DENSE_DILATIONS, MBDC_DILATIONS
from pcnn.model import ModelConfig

MBDC_KERNEL = 3
DILATED_KERNEL = 3
DILATED_RATE = 4
DENSE_KERNEL = 9

ATTENTION_REFERENCE_DIMS = (64, 100, 128)


# ---------------------------------------------------------------------------
# receptive fields and sampling rates


def receptive_field(kernel: int, dilation: int) -> int:
    """Span of one dilated kernel along one axis: (k-1)*d + 1."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    return (kernel - 1) * dilation + 1


def receptive_field_branches(kernel: int, dilations) -> int:
    return max(receptive_field(kernel, d) for d in dilations)


def tap_grid(kernel: int, dilation: int) -> set[tuple[int, int]]:
    """Tap offsets of one square dilated kernel, centered at (0, 0)."""
    half = (kernel - 1) // 2
    line = [(i - half) * dilation for i in range(kernel)]
    return {(dy, dx) for dy in line for dx in line}


def sampling_rate(dilations, kernel: int) -> tuple[float, float]:
    """Fraction of the receptive field actually tapped by a branch set.

    Returns (with multiplicity, distinct points); a tap shared by several
    branches counts once in the distinct rate.
    """
    rf = receptive_field_branches(kernel, dilations)
    area = rf * rf
    with_multiplicity = len(list(dilations)) * kernel * kernel / area
    union: set[tuple[int, int]] = set()
    for d in dilations:
        union |= tap_grid(kernel, d)
    return with_multiplicity, len(union) / area


# ---------------------------------------------------------------------------
# parameter counting (mirrors pcnn.blocks layer by layer)


def conv_params(cout: int, cin_g: int, kh: int, kw: int, bias: bool = True) -> int:
    return cout * cin_g * kh * kw + (cout if bias else 0)


def norm_params(channels: int) -> int:
    return 2 * channels


def prelu_params(channels: int) -> int:
    return channels


def dense_block_params(channels: int) -> int:
    total = 0
    for i in range(len(DENSE_DILATIONS)):
        total += conv_params(channels, channels * (i + 1), 1, 3)
        total += prelu_params(channels)
    return total


def encoder_params(channels: int) -> int:
    return (conv_params(channels, 1, 1, 1) + norm_params(channels) + prelu_params(channels)
            + dense_block_params(channels)
            + conv_params(channels, channels, 1, 3) + norm_params(channels)
            + prelu_params(channels))


def channel_attention_params(channels: int, reduction: int) -> int:
    mid = max(1, channels // reduction)
    return channels * mid + mid + mid * channels + channels


def mbdc_params(channels: int, reduction: int) -> int:
    branches = len(MBDC_DILATIONS)
    return branches * (conv_params(channels, channels, 3, 3)
                       + channel_attention_params(channels, reduction))


def ctfa_params(channels: int, attn_dim: int) -> int:
    per_conv = attn_dim * 1 * 1 + attn_dim
    return 6 * per_conv + conv_params(channels, channels, 1, 1)


def hfb_params(channels: int, reduction: int) -> int:
    return (conv_params(2 * channels, 1, 3, 3, bias=False)
            + conv_params(channels, 2 * channels, 1, 1, bias=False)
            + channel_attention_params(channels, reduction))


def ffn_params(channels: int, hidden: int) -> int:
    return (channels * 3 * hidden + hidden * 3 * hidden + 3 * hidden
            + hidden * channels + channels)


def pcb_params(channels: int, attn_dim: int, hidden: int, reduction: int) -> int:
    return (2 * norm_params(channels)
            + mbdc_params(channels, reduction)
            + ctfa_params(channels, attn_dim)
            + hfb_params(channels, reduction)
            + ffn_params(channels, hidden))


def masking_params(channels: int) -> int:
    return (conv_params(2 * channels, channels, 1, 1) + prelu_params(2 * channels)
            + 3 * conv_params(channels, channels, 1, 1))


def decoder_params(channels: int) -> int:
    return (dense_block_params(channels)
            + conv_params(2 * channels, channels, 1, 3)
            + norm_params(channels) + prelu_params(channels)
            + conv_params(1, channels, 1, 1))


def param_count(config: ModelConfig) -> int:
    """Total scalar parameters of a built model, by closed-form accounting."""
    c = config.channels
    return (encoder_params(c)
            + config.num_pcb * pcb_params(c, config.attn_dim, config.gru_hidden,
                                          config.ca_reduction)
            + masking_params(c)
            + decoder_params(c))


def param_breakdown(config: ModelConfig) -> dict[str, int]:
    c = config.channels
    per_pcb = pcb_params(c, config.attn_dim, config.gru_hidden, config.ca_reduction)
    return {
        "encoder": encoder_params(c),
        "pcb_each": per_pcb,
        "pcb_all": config.num_pcb * per_pcb,
        "masking": masking_params(c),
        "decoder": decoder_params(c),
        "total": param_count(config),
    }


# ---------------------------------------------------------------------------
# attention cost


@dataclass(frozen=True)
class AttentionCost:
    """Exact MAC counts for attention-map construction on a C x T x F tensor."""

    factorized_map_macs: int
    axiswise_full_sa_macs: int
    flattened_full_sa_macs: int
    asymptotic_ratio: float


def attention_cost(c: int, t: int, f: int, d: int) -> AttentionCost:
    if min(c, t, f, d) < 1:
        raise ValueError("dimensions must be positive")
    factorized = sum(2 * d * n + d * n * n for n in (c, t, f))
    axiswise = c * c * t * f + c * t * t * f + c * t * f * f
    flattened = (t * f) * (t * f) * c
    ratio = (c * c + t * t + f * f) / axiswise
    return AttentionCost(factorized, axiswise, flattened, ratio)


def factorized_map_macs(c: int, t: int, f: int, d: int) -> int:
    """Query/key lifts (2*d*n each) plus the n x n outer products (d*n^2)."""
    return attention_cost(c, t, f, d).factorized_map_macs


# ---------------------------------------------------------------------------
# kernel-variant comparison table


@dataclass(frozen=True)
class ConvVariant:
    name: str
    kernel: int
    dilations: tuple[int, ...]
    weight_scale_split: float   # weights relative to the dilated conv, channel-split branches
    weight_scale_full: float    # same, with every branch mapping C -> C


def _weight_scales() -> tuple[float, float, float, float]:
    base = DILATED_KERNEL * DILATED_KERNEL            # dilated conv weights per C^2
    branches = len(MBDC_DILATIONS)
    full = branches * MBDC_KERNEL * MBDC_KERNEL       # every branch C -> C
    split = full / branches                           # branches output C/3, concatenated
    dense = DENSE_KERNEL * DENSE_KERNEL
    return split / base, full / base, 1.0, dense / base


def table1_variants() -> list[ConvVariant]:
    split_scale, full_scale, dilated_scale, dense_scale = _weight_scales()
    return [
        ConvVariant("mbdc", MBDC_KERNEL, tuple(MBDC_DILATIONS), split_scale, full_scale),
        ConvVariant("dilated", DILATED_KERNEL, (DILATED_RATE,), dilated_scale, dilated_scale),
        ConvVariant("dense", DENSE_KERNEL, (1,), dense_scale, dense_scale),
    ]


def format_rate(value: float) -> str:
    return "100%" if value == 1.0 else f"{100.0 * value:.2f}%"


def format_scale(value: float) -> str:
    return f"{value:.2f}N"


# ---------------------------------------------------------------------------
# report


@dataclass
class AnalysisReport:
    config: ModelConfig
    variants: list[ConvVariant]
    receptive_fields: dict[str, int]
    rates: dict[str, tuple[float, float]]
    params: dict[str, int]
    reference_cost: AttentionCost
    config_cost: AttentionCost

    def render(self) -> str:
        lines = ["architecture analysis", "=" * 21, ""]
        names = [v.name for v in self.variants]
        lines.append("[kernel variants]")
        lines.append("variant:                 " + "  ".join(f"{n:>8s}" for n in names))
        lines.append("kernel:                  " + "  ".join(
            f"{v.kernel}x{v.kernel}".rjust(8) for v in self.variants))
        lines.append("dilation:                " + "  ".join(
            ",".join(str(d) for d in v.dilations).rjust(8) for v in self.variants))
        lines.append("receptive_field:         " + "  ".join(
            f"{self.receptive_fields[n]}x{self.receptive_fields[n]}".rjust(8) for n in names))
        lines.append("sampling_rate:           " + "  ".join(
            format_rate(self.rates[n][0]).rjust(8) for n in names))
        lines.append("sampling_rate_distinct:  " + "  ".join(
            format_rate(self.rates[n][1]).rjust(8) for n in names))
        lines.append("weights (channel-split): " + "  ".join(
            format_scale(v.weight_scale_split).rjust(8) for v in self.variants))
        lines.append("weights (full-width):    " + "  ".join(
            format_scale(v.weight_scale_full).rjust(8) for v in self.variants))
        lines.append("")

        rc, rt, rf = ATTENTION_REFERENCE_DIMS
        d = self.config.attn_dim
        lines.append(f"[attention cost at C={rc} T={rt} F={rf} d={d}]")
        lines.append(f"factorized_map_macs:     {self.reference_cost.factorized_map_macs}")
        lines.append(f"axiswise_full_sa_macs:   {self.reference_cost.axiswise_full_sa_macs}")
        lines.append(f"flattened_full_sa_macs:  {self.reference_cost.flattened_full_sa_macs}")
        lines.append(f"asymptotic_ratio:        {self.reference_cost.asymptotic_ratio:.12e}")
        lines.append("  ratio = (C^2 + T^2 + F^2) / (C^2*T*F + C*T^2*F + C*T*F^2)")
        lines.append("")

        cfg = self.config
        sep_w = cfg.frame_len // 2
        lines.append(f"[attention cost at config dims C={cfg.channels} "
                     f"T=100 F={sep_w} d={cfg.attn_dim}]")
        lines.append(f"factorized_map_macs:     {self.config_cost.factorized_map_macs}")
        lines.append(f"axiswise_full_sa_macs:   {self.config_cost.axiswise_full_sa_macs}")
        lines.append(f"asymptotic_ratio:        {self.config_cost.asymptotic_ratio:.12e}")
        lines.append("")

        lines.append(f"[parameters for config: channels={cfg.channels} num_pcb={cfg.num_pcb} "
                     f"attn_dim={cfg.attn_dim} gru_hidden={cfg.gru_hidden}]")
        for key in ("encoder", "pcb_each", "pcb_all", "masking", "decoder", "total"):
            lines.append(f"{key + ':':<16s}{self.params[key]:>12d}")
        lines.append("")
        return "\n".join(lines)


def analyze(config: ModelConfig) -> AnalysisReport:
    variants = table1_variants()
    rc, rt, rf = ATTENTION_REFERENCE_DIMS
    sep_w = config.frame_len // 2
    return AnalysisReport(
        config=config,
        variants=variants,
        receptive_fields={
            v.name: receptive_field_branches(v.kernel, v.dilations) for v in variants
        },
        rates={v.name: sampling_rate(v.dilations, v.kernel) for v in variants},
        params=param_breakdown(config),
        reference_cost=attention_cost(rc, rt, rf, config.attn_dim),
        config_cost=attention_cost(config.channels, 100, sep_w, config.attn_dim),
    )
