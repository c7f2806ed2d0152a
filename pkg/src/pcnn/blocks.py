"""Network sub-blocks: encoder, dual-branch conformer block, masking, decoder.

Parameter containers are plain dataclasses of tensors; each block has an
``init_*`` builder (uniform +/- sqrt(1/fan_in), seeded rng) and a pure
``*_forward`` function. ``named_tensors`` walks any container and yields
dotted parameter names in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass
from typing import Iterator

import numpy as np

from pcnn import ops
from pcnn.tensor import Tensor

LN_EPS = 1e-10
DENSE_LAYERS = 4
DENSE_DILATIONS = (1, 2, 4, 8)
MBDC_DILATIONS = (1, 2, 4)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = float(np.sqrt(1.0 / max(fan_in, 1)))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def named_tensors(node, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    if isinstance(node, Tensor):
        yield prefix, node
    elif is_dataclass(node):
        for f in fields(node):
            child = getattr(node, f.name)
            if child is None:
                continue
            yield from named_tensors(child, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(node, (list, tuple)):
        for i, child in enumerate(node):
            yield from named_tensors(child, f"{prefix}.{i}")


# ---------------------------------------------------------------------------
# shared pieces


@dataclass
class ConvParams:
    w: Tensor
    b: Tensor | None


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class PReluParams:
    slope: Tensor


def init_conv(rng, cout, cin_g, kh, kw, bias=True) -> ConvParams:
    fan_in = cin_g * kh * kw
    return ConvParams(
        w=_uniform(rng, (cout, cin_g, kh, kw), fan_in),
        b=_uniform(rng, (cout,), fan_in) if bias else None,
    )


def init_norm(channels: int) -> NormParams:
    return NormParams(
        gamma=Tensor(np.ones(channels), requires_grad=True),
        beta=Tensor(np.zeros(channels), requires_grad=True),
    )


def init_prelu(channels: int) -> PReluParams:
    return PReluParams(slope=Tensor(np.full(channels, 0.25), requires_grad=True))


def channel_norm(x: Tensor, p: NormParams) -> Tensor:
    """Layer normalization over the channel axis with per-channel affine."""
    return ops.layer_norm(x, (0,), p.gamma, p.beta, LN_EPS)


# ---------------------------------------------------------------------------
# dilated-dense block


@dataclass
class DenseLayerParams:
    conv: ConvParams
    act: PReluParams


@dataclass
class DenseBlockParams:
    layers: list[DenseLayerParams]


def init_dense_block(rng, channels: int) -> DenseBlockParams:
    layers = []
    for i in range(DENSE_LAYERS):
        cin = channels * (i + 1)
        layers.append(DenseLayerParams(
            conv=init_conv(rng, channels, cin, 1, 3),
            act=init_prelu(channels),
        ))
    return DenseBlockParams(layers)


def dense_block_forward(p: DenseBlockParams, x: Tensor) -> Tensor:
    """Four width-dilated (1,3) convolutions with dense input concatenation."""
    stack = x
    out = x
    for layer, d in zip(p.layers, DENSE_DILATIONS):
        out = ops.prelu(
            ops.conv2d(stack, layer.conv.w, layer.conv.b,
                       dilation=(1, d), padding=(0, d)),
            layer.act.slope,
        )
        stack = ops.concat([stack, out], 0)
    return out


# ---------------------------------------------------------------------------
# encoder / decoder


@dataclass
class EncoderParams:
    conv_in: ConvParams
    norm_in: NormParams
    act_in: PReluParams
    dense: DenseBlockParams
    conv_down: ConvParams
    norm_down: NormParams
    act_down: PReluParams


def init_encoder(rng, channels: int) -> EncoderParams:
    return EncoderParams(
        conv_in=init_conv(rng, channels, 1, 1, 1),
        norm_in=init_norm(channels),
        act_in=init_prelu(channels),
        dense=init_dense_block(rng, channels),
        conv_down=init_conv(rng, channels, channels, 1, 3),
        norm_down=init_norm(channels),
        act_down=init_prelu(channels),
    )


def encoder_forward(p: EncoderParams, x: Tensor) -> Tensor:
    """[1, frames, L] -> [C, frames, L/2]; each conv is followed by norm+PReLU."""
    if x.shape[2] % 2 != 0:
        raise ValueError(f"frame length must be even, got {x.shape[2]}")
    h = ops.conv2d(x, p.conv_in.w, p.conv_in.b)
    h = ops.prelu(channel_norm(h, p.norm_in), p.act_in.slope)
    h = dense_block_forward(p.dense, h)
    h = ops.conv2d(h, p.conv_down.w, p.conv_down.b, stride=(1, 2), padding=(0, 1))
    return ops.prelu(channel_norm(h, p.norm_down), p.act_down.slope)


@dataclass
class DecoderParams:
    dense: DenseBlockParams
    conv_up: ConvParams
    norm: NormParams
    act: PReluParams
    conv_out: ConvParams


def init_decoder(rng, channels: int) -> DecoderParams:
    return DecoderParams(
        dense=init_dense_block(rng, channels),
        conv_up=init_conv(rng, 2 * channels, channels, 1, 3),
        norm=init_norm(channels),
        act=init_prelu(channels),
        conv_out=init_conv(rng, 1, channels, 1, 1),
    )


def decoder_forward(p: DecoderParams, x: Tensor) -> Tensor:
    """[C, frames, W] -> [1, frames, 2W] via sub-pixel width upsampling."""
    h = dense_block_forward(p.dense, x)
    h = ops.conv2d(h, p.conv_up.w, p.conv_up.b, padding=(0, 1))
    h = ops.subpixel_shuffle(h, 2)
    h = ops.prelu(channel_norm(h, p.norm), p.act.slope)
    return ops.conv2d(h, p.conv_out.w, p.conv_out.b)


# ---------------------------------------------------------------------------
# channel attention (squeeze -> bottleneck -> sigmoid gates)


@dataclass
class ChannelAttentionParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_channel_attention(rng, channels: int, reduction: int) -> ChannelAttentionParams:
    mid = max(1, channels // reduction)
    return ChannelAttentionParams(
        w1=_uniform(rng, (channels, mid), channels),
        b1=_uniform(rng, (mid,), channels),
        w2=_uniform(rng, (mid, channels), mid),
        b2=_uniform(rng, (channels,), mid),
    )


def channel_gates(p: ChannelAttentionParams, x: Tensor) -> Tensor:
    pooled = ops.reshape(ops.global_pool(x, 0), (1, x.shape[0]))
    hidden = ops.relu(ops.add(ops.matmul(pooled, p.w1), p.b1))
    return ops.sigmoid(ops.add(ops.matmul(hidden, p.w2), p.b2))


def channel_attention_forward(p: ChannelAttentionParams, x: Tensor) -> Tensor:
    gates = channel_gates(p, x)
    return ops.mul(x, ops.reshape(gates, (x.shape[0], 1, 1)))


# ---------------------------------------------------------------------------
# multi-branch dilated convolution


@dataclass
class MBDCParams:
    branches: list[ConvParams]
    gates: list[ChannelAttentionParams]


def init_mbdc(rng, channels: int, reduction: int) -> MBDCParams:
    return MBDCParams(
        branches=[init_conv(rng, channels, channels, 3, 3) for _ in MBDC_DILATIONS],
        gates=[init_channel_attention(rng, channels, reduction) for _ in MBDC_DILATIONS],
    )


def mbdc_forward(p: MBDCParams, x: Tensor) -> Tensor:
    out = None
    for conv, gate, d in zip(p.branches, p.gates, MBDC_DILATIONS):
        y = ops.conv2d(x, conv.w, conv.b, dilation=(d, d), padding=(d, d))
        y = channel_attention_forward(gate, y)
        out = y if out is None else ops.add(out, y)
    return out


# ---------------------------------------------------------------------------
# factorized channel/time/frequency attention


@dataclass
class CTFAParams:
    query: list[ConvParams]   # one 1x1 1-D conv per branch, 1 -> d channels
    key: list[ConvParams]
    value: ConvParams         # 1x1 2-D conv, C -> C


def init_ctfa(rng, channels: int, attn_dim: int) -> CTFAParams:
    def pconv():
        return ConvParams(
            w=_uniform(rng, (attn_dim, 1, 1), 1),
            b=_uniform(rng, (attn_dim,), 1),
        )

    return CTFAParams(
        query=[pconv() for _ in range(3)],
        key=[pconv() for _ in range(3)],
        value=init_conv(rng, channels, channels, 1, 1),
    )


def ctfa_attention_maps(p: CTFAParams, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Row-stochastic maps for the channel, time, and frequency axes.

    Each branch pools the input to a 1-D energy feature, lifts it to
    query/key rows with 1x1 convolutions, and softmaxes the outer product.
    """
    maps = []
    for axis in range(3):
        feat = ops.reshape(ops.global_pool(x, axis), (1, x.shape[axis]))
        q = ops.pointwise_conv1d(feat, p.query[axis].w, p.query[axis].b)
        k = ops.pointwise_conv1d(feat, p.key[axis].w, p.key[axis].b)
        logits = ops.matmul(ops.transpose(q, (1, 0)), k)
        maps.append(ops.softmax(logits, axis=1))
    return maps[0], maps[1], maps[2]


def ctfa_forward(p: CTFAParams, x: Tensor) -> Tensor:
    c, t, f = x.shape
    m_c, m_t, m_f = ctfa_attention_maps(p, x)
    v = ops.conv2d(x, p.value.w, p.value.b)

    by_c = ops.reshape(ops.matmul(m_c, ops.reshape(v, (c, t * f))), (c, t, f))
    v_t = ops.reshape(ops.transpose(v, (1, 0, 2)), (t, c * f))
    by_t = ops.transpose(ops.reshape(ops.matmul(m_t, v_t), (t, c, f)), (1, 0, 2))
    by_f = ops.reshape(ops.matmul(ops.reshape(v, (c * t, f)), ops.transpose(m_f, (1, 0))),
                       (c, t, f))
    return ops.add(ops.add(by_c, by_t), by_f)


# ---------------------------------------------------------------------------
# hybrid fusion block


@dataclass
class HFBParams:
    depthwise: ConvParams  # bias-free 3x3 over 2C channels
    pointwise: ConvParams  # bias-free 1x1, 2C -> C
    gate: ChannelAttentionParams


def init_hfb(rng, channels: int, reduction: int) -> HFBParams:
    return HFBParams(
        depthwise=init_conv(rng, 2 * channels, 1, 3, 3, bias=False),
        pointwise=init_conv(rng, channels, 2 * channels, 1, 1, bias=False),
        gate=init_channel_attention(rng, channels, reduction),
    )


def hfb_forward(p: HFBParams, local: Tensor, global_: Tensor) -> Tensor:
    if local.shape != global_.shape:
        raise ValueError(
            f"fusion inputs must match, got {local.shape} and {global_.shape}"
        )
    merged = ops.concat([local, global_], 0)
    h = ops.conv2d(merged, p.depthwise.w, None, padding=(1, 1), groups=merged.shape[0])
    h = ops.conv2d(h, p.pointwise.w, None)
    return channel_attention_forward(p.gate, h)


# ---------------------------------------------------------------------------
# GRU feed-forward


@dataclass
class FFNParams:
    gru: ops.GruWeights
    proj_w: Tensor
    proj_b: Tensor


def init_ffn(rng, channels: int, hidden: int) -> FFNParams:
    return FFNParams(
        gru=ops.GruWeights(
            w_in=_uniform(rng, (channels, 3 * hidden), hidden),
            w_rec=_uniform(rng, (hidden, 3 * hidden), hidden),
            bias=_uniform(rng, (3 * hidden,), hidden),
        ),
        proj_w=_uniform(rng, (hidden, channels), hidden),
        proj_b=_uniform(rng, (channels,), hidden),
    )


def ffn_forward(p: FFNParams, x: Tensor) -> Tensor:
    """Run the GRU along the frame axis for every frequency index."""
    c, t, f = x.shape
    hidden = p.gru.hidden
    seq = ops.transpose(x, (2, 1, 0))  # [F, T, C]
    h0 = Tensor(np.zeros(hidden))
    states = ops.gru_layer_batched(seq, h0, p.gru)
    flat = ops.reshape(states, (f * t, hidden))
    proj = ops.add(ops.matmul(flat, p.proj_w), p.proj_b)
    return ops.transpose(ops.reshape(proj, (f, t, c)), (2, 1, 0))


# ---------------------------------------------------------------------------
# parallel conformer block


@dataclass
class PCBParams:
    norm_dual: NormParams
    mbdc: MBDCParams
    ctfa: CTFAParams
    hfb: HFBParams
    norm_ffn: NormParams
    ffn: FFNParams


def init_pcb(rng, channels: int, attn_dim: int, hidden: int, reduction: int) -> PCBParams:
    return PCBParams(
        norm_dual=init_norm(channels),
        mbdc=init_mbdc(rng, channels, reduction),
        ctfa=init_ctfa(rng, channels, attn_dim),
        hfb=init_hfb(rng, channels, reduction),
        norm_ffn=init_norm(channels),
        ffn=init_ffn(rng, channels, hidden),
    )


def pcb_forward(p: PCBParams, x: Tensor) -> Tensor:
    """Dual branch with fusion, then GRU feed-forward; skips around both."""
    normed = channel_norm(x, p.norm_dual)
    fused = hfb_forward(p.hfb, mbdc_forward(p.mbdc, normed), ctfa_forward(p.ctfa, normed))
    mid = ops.add(x, fused)
    return ops.add(mid, ffn_forward(p.ffn, channel_norm(mid, p.norm_ffn)))


# ---------------------------------------------------------------------------
# masking module


@dataclass
class MaskingParams:
    expand: ConvParams   # 1x1, C -> 2C
    act: PReluParams
    gate_a: ConvParams
    gate_b: ConvParams
    mask_conv: ConvParams


def init_masking(rng, channels: int) -> MaskingParams:
    return MaskingParams(
        expand=init_conv(rng, 2 * channels, channels, 1, 1),
        act=init_prelu(2 * channels),
        gate_a=init_conv(rng, channels, channels, 1, 1),
        gate_b=init_conv(rng, channels, channels, 1, 1),
        mask_conv=init_conv(rng, channels, channels, 1, 1),
    )


def estimate_mask(p: MaskingParams, sep_out: Tensor) -> Tensor:
    """Nonnegative mask from the separator output (tanh*sigmoid gating, ReLU)."""
    c = sep_out.shape[0]
    h = ops.prelu(ops.conv2d(sep_out, p.expand.w, p.expand.b), p.act.slope)
    half_a = ops.narrow(h, 0, 0, c)
    half_b = ops.narrow(h, 0, c, c)
    gate = ops.mul(
        ops.tanh(ops.conv2d(half_a, p.gate_a.w, p.gate_a.b)),
        ops.sigmoid(ops.conv2d(half_b, p.gate_b.w, p.gate_b.b)),
    )
    return ops.relu(ops.conv2d(gate, p.mask_conv.w, p.mask_conv.b))


def masking_forward(p: MaskingParams, sep_out: Tensor, enc_out: Tensor) -> Tensor:
    if sep_out.shape != enc_out.shape:
        raise ValueError(
            f"separator and encoder outputs must match, got {sep_out.shape} and {enc_out.shape}"
        )
    return ops.mul(estimate_mask(p, sep_out), enc_out)
