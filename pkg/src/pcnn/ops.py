"""Forward operations with reverse-mode gradients.

Every function here is pure: it reads its input tensors, produces a new
tensor, and (when a tape is active and some input requires a gradient)
records a pull-back closure on the tape. Convolution inner loops are
delegated to :mod:`pcnn.kernels`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from pcnn import kernels
from pcnn.tensor import Tensor, active_tape, as_tensor

_MACS = threading.local()


class MacCounter:
    """Accumulates multiply-accumulate counts for conv and matmul ops."""

    def __init__(self):
        self.total = 0


@contextmanager
def count_macs():
    """Count MACs executed by ops inside the block.

    Only contraction ops (conv2d, pointwise_conv1d, matmul) contribute;
    elementwise work, pooling, and softmax are not multiply-accumulates.
    """
    stack = getattr(_MACS, "stack", None)
    if stack is None:
        stack = []
        _MACS.stack = stack
    counter = MacCounter()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def _add_macs(n: int) -> None:
    stack = getattr(_MACS, "stack", None)
    if stack:
        for c in stack:
            c.total += n


def _record(out: Tensor, inputs, pull_back) -> Tensor:
    tape = active_tape()
    if tape is not None and any(
        t.requires_grad or tape.watches(t) for t in inputs if isinstance(t, Tensor)
    ):
        out.requires_grad = True
        tape.record(out, inputs, pull_back)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def pull(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), pull)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def pull(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record(out, (a, b), pull)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def pull(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), pull)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def sqrt(a) -> Tensor:
    """Elementwise square root; the pull-back is 0 where the input is 0."""
    a = as_tensor(a)
    root = np.sqrt(a.data)
    out = Tensor(root)

    def pull(g):
        safe = np.where(root > 0.0, root, 1.0)
        return (np.where(root > 0.0, 0.5 * g / safe, 0.0),)

    return _record(out, (a,), pull)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean())
    inv = 1.0 / a.size

    def pull(g):
        return (np.broadcast_to(g * inv, a.shape).copy(),)

    return _record(out, (a,), pull)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape[1]} vs {b.shape[0]}")
    _add_macs(a.shape[0] * a.shape[1] * b.shape[1])
    out = Tensor(a.data @ b.data)

    def pull(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), pull)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return _record(out, (a,), lambda g: (g.transpose(inverse),))


def concat(parts, axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def pull(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), pull)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx].copy())

    def pull(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _record(out, (a,), pull)


# ---------------------------------------------------------------------------
# activations


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t)
    return _record(out, (a,), lambda g: (g * (1.0 - t * t),))


def activation(a, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(a)


def prelu(x: Tensor, alpha: Tensor, axis: int = 0) -> Tensor:
    """Leaky rectifier with a learnable per-channel negative slope."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    if alpha.data.ndim != 1 or alpha.shape[0] != x.shape[axis]:
        raise ValueError(
            f"prelu slope must be 1-D of extent {x.shape[axis]} (axis {axis}), got {alpha.shape}"
        )
    a_shape = [1] * x.data.ndim
    a_shape[axis] = alpha.shape[0]
    a_b = alpha.data.reshape(a_shape)
    pos = x.data >= 0.0
    out = Tensor(np.where(pos, x.data, a_b * x.data))

    def pull(g):
        dx = np.where(pos, g, a_b * g)
        da = np.where(pos, 0.0, x.data * g)
        reduce_axes = tuple(i for i in range(x.data.ndim) if i != axis)
        return dx, da.sum(axis=reduce_axes)

    return _record(out, (x, alpha), pull)


def softmax(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def pull(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return ((g - inner) * s,)

    return _record(out, (x,), pull)


def layer_norm(x: Tensor, axes, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Normalize to zero mean / unit variance over ``axes``, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0.0:
        raise ValueError("layer_norm eps must be positive")
    axes = tuple(sorted(a % x.data.ndim for a in axes))
    group_shape = tuple(x.shape[a] for a in axes)
    if gamma.shape != group_shape or beta.shape != group_shape:
        raise ValueError(
            f"gamma/beta must have shape {group_shape} for axes {axes}, "
            f"got {gamma.shape} and {beta.shape}"
        )
    bshape = tuple(x.shape[i] if i in axes else 1 for i in range(x.data.ndim))
    g_b = gamma.data.reshape(bshape)
    b_b = beta.data.reshape(bshape)

    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(g_b * xhat + b_b)

    other = tuple(i for i in range(x.data.ndim) if i not in axes)

    def pull(g):
        dgamma = (g * xhat).sum(axis=other)
        dbeta = g.sum(axis=other)
        dxhat = g * g_b
        m1 = dxhat.mean(axis=axes, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
        dx = inv_std * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), pull)


# ---------------------------------------------------------------------------
# convolution family


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride=(1, 1),
    dilation=(1, 1),
    padding=(0, 0),
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of x [Cin,H,W] with w [Cout,Cin/groups,kh,kw]."""
    x, w = as_tensor(x), as_tensor(w)
    stride, dilation, padding = _pair(stride), _pair(dilation), _pair(padding)
    if x.data.ndim != 3:
        raise ValueError(f"conv2d input must be 3-D [Cin,H,W], got {x.shape}")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D [Cout,Cin/groups,kh,kw], got {w.shape}")
    cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if groups < 1 or cin % groups != 0:
        raise ValueError(f"input channels {cin} not divisible by groups {groups}")
    if cout % groups != 0:
        raise ValueError(f"output channels {cout} not divisible by groups {groups}")
    if cin_g != cin // groups:
        raise ValueError(
            f"weight channel extent {cin_g} does not match Cin/groups = {cin // groups}"
        )
    out_h = (h + 2 * padding[0] - dilation[0] * (kh - 1) - 1) // stride[0] + 1
    out_w = (wd + 2 * padding[1] - dilation[1] * (kw - 1) - 1) // stride[1] + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"conv2d output extent would be {out_h}x{out_w} for input {h}x{wd}"
        )
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ValueError(f"bias must have extent {cout}, got {b.shape}")

    _add_macs(cout * out_h * out_w * cin_g * kh * kw)
    y = kernels.conv2d_forward(x.data, w.data, stride, dilation, padding, groups)
    if b is not None:
        y = y + b.data[:, None, None]
    out = Tensor(y)

    inputs = (x, w) if b is None else (x, w, b)

    def pull(g):
        g = np.ascontiguousarray(g)
        dx = kernels.conv2d_backward_input(g, w.data, x.shape, stride, dilation, padding, groups)
        dw_ = kernels.conv2d_backward_weight(g, x.data, w.shape, stride, dilation, padding, groups)
        if b is None:
            return dx, dw_
        return dx, dw_, g.sum(axis=(1, 2))

    return _record(out, inputs, pull)


def pointwise_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-position linear map across channels: x [Cin,L], w [Cout,Cin,1]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2:
        raise ValueError(f"pointwise_conv1d input must be 2-D [Cin,L], got {x.shape}")
    if w.data.ndim != 3 or w.shape[2] != 1:
        raise ValueError(f"pointwise_conv1d weight must be [Cout,Cin,1], got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"weight Cin {w.shape[1]} does not match input Cin {x.shape[0]}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias must have extent {w.shape[0]}, got {b.shape}")

    _add_macs(w.shape[0] * w.shape[1] * x.shape[1])
    w2 = w.data[:, :, 0]
    y = w2 @ x.data
    if b is not None:
        y = y + b.data[:, None]
    out = Tensor(y)
    inputs = (x, w) if b is None else (x, w, b)

    def pull(g):
        dx = w2.T @ g
        dw_ = (g @ x.data.T)[:, :, None]
        if b is None:
            return dx, dw_
        return dx, dw_, g.sum(axis=1)

    return _record(out, inputs, pull)


def subpixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange channel blocks into width: [C*r,T,F] -> [C,T,F*r].

    Channel-major interleave: out[c, t, f*r + j] = in[c*r + j, t, f].
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError(f"subpixel_shuffle input must be 3-D, got {x.shape}")
    cr, t, f = x.shape
    if cr % r != 0:
        raise ValueError(f"channel extent {cr} not divisible by upsample factor {r}")
    c = cr // r
    y = x.data.reshape(c, r, t, f).transpose(0, 2, 3, 1).reshape(c, t, f * r)
    out = Tensor(np.ascontiguousarray(y))

    def pull(g):
        return (g.reshape(c, t, f, r).transpose(0, 3, 1, 2).reshape(cr, t, f),)

    return _record(out, (x,), pull)


def subpixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`subpixel_shuffle`."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError(f"subpixel_unshuffle input must be 3-D, got {x.shape}")
    c, t, fr = x.shape
    if fr % r != 0:
        raise ValueError(f"width extent {fr} not divisible by factor {r}")
    f = fr // r
    y = x.data.reshape(c, t, f, r).transpose(0, 3, 1, 2).reshape(c * r, t, f)
    out = Tensor(np.ascontiguousarray(y))

    def pull(g):
        return (g.reshape(c, r, t, f).transpose(0, 2, 3, 1).reshape(c, t, fr),)

    return _record(out, (x,), pull)


def global_pool(x: Tensor, kept_axis: int, kind: str = "avg") -> Tensor:
    """Mean over every axis except ``kept_axis``; output is 1-D."""
    x = as_tensor(x)
    if kind != "avg":
        raise ValueError(f"unsupported pooling kind {kind!r}")
    nd = x.data.ndim
    kept_axis = kept_axis % nd
    other = tuple(i for i in range(nd) if i != kept_axis)
    out = Tensor(x.data.mean(axis=other))
    count = 1
    for i in other:
        count *= x.shape[i]
    inv = 1.0 / count
    bshape = tuple(x.shape[i] if i == kept_axis else 1 for i in range(nd))

    def pull(g):
        return (np.broadcast_to(g.reshape(bshape) * inv, x.shape).copy(),)

    return _record(out, (x,), pull)


# ---------------------------------------------------------------------------
# recurrence


@dataclass
class GruWeights:
    """One GRU layer: gate order [update z, reset r, candidate n].

    The reset gate multiplies the hidden state before the candidate's
    recurrent matmul: n = tanh(W_n x + b_n + U_n (r * h)).
    """

    w_in: Tensor   # [D, 3H]
    w_rec: Tensor  # [H, 3H]
    bias: Tensor   # [3H]

    @property
    def hidden(self) -> int:
        return self.w_rec.shape[0]


def gru_layer_batched(x: Tensor, h0: Tensor, weights: GruWeights) -> Tensor:
    """Run a GRU over axis 1 of x [B,T,D]; returns hidden states [B,T,H]."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError(f"gru input must be 3-D [B,T,D], got {x.shape}")
    batch, steps, dim = x.shape
    hid = weights.hidden
    if weights.w_in.shape != (dim, 3 * hid):
        raise ValueError(
            f"w_in must be [{dim},{3 * hid}] for input dim {dim}, got {weights.w_in.shape}"
        )
    if weights.bias.shape != (3 * hid,):
        raise ValueError(f"bias must have extent {3 * hid}, got {weights.bias.shape}")
    h0 = as_tensor(h0)
    if h0.shape != (hid,):
        raise ValueError(f"h0 must have extent {hid}, got {h0.shape}")

    u_zr = narrow(weights.w_rec, 1, 0, 2 * hid)
    u_n = narrow(weights.w_rec, 1, 2 * hid, hid)
    h = add(Tensor(np.zeros((batch, hid))), h0)
    outs = []
    for t in range(steps):
        xt = reshape(narrow(x, 1, t, 1), (batch, dim))
        gx = add(matmul(xt, weights.w_in), weights.bias)
        rec_zr = matmul(h, u_zr)
        z = sigmoid(add(narrow(gx, 1, 0, hid), narrow(rec_zr, 1, 0, hid)))
        r = sigmoid(add(narrow(gx, 1, hid, hid), narrow(rec_zr, 1, hid, hid)))
        n = tanh(add(narrow(gx, 1, 2 * hid, hid), matmul(mul(r, h), u_n)))
        h = add(mul(sub(1.0, z), n), mul(z, h))
        outs.append(reshape(h, (batch, 1, hid)))
    return concat(outs, 1)


def gru_layer(x: Tensor, h0: Tensor, weights: GruWeights) -> Tensor:
    """Single-sequence GRU: x [T,D] -> hidden states [T,H]."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"gru_layer input must be 2-D [T,D], got {x.shape}")
    steps, dim = x.shape
    y = gru_layer_batched(reshape(x, (1, steps, dim)), h0, weights)
    return reshape(y, (steps, weights.hidden))


# ---------------------------------------------------------------------------
# waveform framing inside the graph


def frame_signal(x: Tensor, frame_len: int, hop: int, pad_each_side: int = 0) -> Tensor:
    """Gather overlapped frames [T, frame_len] from a 1-D signal.

    Frame t covers padded samples [t*hop, t*hop + frame_len); the tail frame
    reads zeros past the end. The pull-back scatter-adds frame gradients
    back onto the signal.
    """
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ValueError(f"frame_signal input must be 1-D, got {x.shape}")
    if hop < 1 or frame_len < 1:
        raise ValueError("frame_len and hop must be >= 1")
    m = x.shape[0]
    padded_len = m + 2 * pad_each_side
    if padded_len <= frame_len:
        n_frames = 1
    else:
        n_frames = int(np.ceil((padded_len - frame_len) / hop)) + 1
    total = (n_frames - 1) * hop + frame_len
    buf = np.zeros(total)
    buf[pad_each_side:pad_each_side + m] = x.data
    idx = np.arange(n_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    out = Tensor(buf[idx])

    def pull(g):
        dbuf = np.zeros(total)
        np.add.at(dbuf, idx, g)
        return (dbuf[pad_each_side:pad_each_side + m],)

    return _record(out, (x,), pull)


def overlap_add_frames(frames: Tensor, hop: int, out_len: int) -> Tensor:
    """Merge frames [F, L] back into a signal of length ``out_len``.

    Each sample is the mean of every frame value that covers it
    (rectangular windows with exact overlap-count normalization).
    """
    frames = as_tensor(frames)
    if frames.data.ndim != 2:
        raise ValueError(f"overlap_add_frames input must be 2-D [F,L], got {frames.shape}")
    n_frames, frame_len = frames.shape
    span = (n_frames - 1) * hop + frame_len
    if out_len > span:
        raise ValueError(f"requested length {out_len} exceeds covered span {span}")
    idx = np.arange(n_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    acc = np.zeros(span)
    np.add.at(acc, idx, frames.data)
    counts = np.zeros(span)
    np.add.at(counts, idx, 1.0)
    out = Tensor(acc[:out_len] / counts[:out_len])
    inv = 1.0 / counts[:out_len]

    def pull(g):
        gfull = np.zeros(span)
        gfull[:out_len] = g * inv
        return (gfull[idx],)

    return _record(out, (frames,), pull)
