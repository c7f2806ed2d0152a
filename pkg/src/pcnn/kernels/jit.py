"""Numba-compiled convolution kernels (default path).

Same contracts as :mod:`pcnn.kernels.reference`. Valid output ranges per
kernel tap are computed analytically so the innermost loops are branch-free
and contiguous. fastmath stays off so the summation order is fixed and
gradient checks keep full float64 headroom. Parallel chunks write disjoint
slices, which keeps results bit-deterministic regardless of thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from pcnn.kernels import reference

BACKEND = "numba"


def _is_pointwise(w_shape, stride, padding) -> bool:
    # 1x1 kernels are plain channel GEMMs; BLAS beats scalar loops there
    return (w_shape[2] == 1 and w_shape[3] == 1
            and stride == (1, 1) and padding == (0, 0))


@njit(cache=True, inline="always")
def _tap_range(tap_offset, stride, limit, n_out):
    """Output positions whose input index tap_offset + pos*stride is in [0, limit)."""
    if tap_offset >= 0:
        lo = 0
    else:
        lo = (-tap_offset + stride - 1) // stride
    top = limit - 1 - tap_offset
    if top < 0:
        return 0, 0
    hi = min(n_out, top // stride + 1)
    return min(lo, n_out), hi


@njit(cache=True, parallel=True)
def _fwd(x, w, out, sh, sw, dh, dw, ph, pw, cin_g, cout_g):
    cout, out_h, out_w = out.shape
    kh, kw = w.shape[2], w.shape[3]
    h, wd = x.shape[1], x.shape[2]
    for co in prange(cout):
        base = (co // cout_g) * cin_g
        # local accumulator is provably alias-free, so the wo loop vectorizes
        buf = np.zeros(out_w)
        for ho in range(out_h):
            for k in range(out_w):
                buf[k] = 0.0
            for ci in range(cin_g):
                xc = x[base + ci]
                for i in range(kh):
                    hi = ho * sh + i * dh - ph
                    if hi < 0 or hi >= h:
                        continue
                    row = xc[hi]
                    for j in range(kw):
                        off_w = j * dw - pw
                        wo_lo, wo_hi = _tap_range(off_w, sw, wd, out_w)
                        coeff = w[co, ci, i, j]
                        for wo in range(wo_lo, wo_hi):
                            buf[wo] += coeff * row[wo * sw + off_w]
            for k in range(out_w):
                out[co, ho, k] = buf[k]


@njit(cache=True, parallel=True)
def _bwd_weight(grad_out, x, dw_, sh, sw, dh, dw, ph, pw, cin_g, cout_g):
    cout, out_h, out_w = grad_out.shape
    kh, kw = dw_.shape[2], dw_.shape[3]
    h, wd = x.shape[1], x.shape[2]
    for co in prange(cout):
        base = (co // cout_g) * cin_g
        for ci in range(cin_g):
            xc = x[base + ci]
            for i in range(kh):
                off_h = i * dh - ph
                ho_lo, ho_hi = _tap_range(off_h, sh, h, out_h)
                for j in range(kw):
                    off_w = j * dw - pw
                    wo_lo, wo_hi = _tap_range(off_w, sw, wd, out_w)
                    acc = 0.0
                    for ho in range(ho_lo, ho_hi):
                        row = xc[ho * sh + off_h]
                        grow = grad_out[co, ho]
                        for wo in range(wo_lo, wo_hi):
                            acc += row[wo * sw + off_w] * grow[wo]
                    dw_[co, ci, i, j] = acc


@njit(cache=True, parallel=True)
def _bwd_input(grad_out, w, dx, sh, sw, dh, dw, ph, pw, cin_g, cout_g):
    cin = dx.shape[0]
    out_h, out_w = grad_out.shape[1], grad_out.shape[2]
    kh, kw = w.shape[2], w.shape[3]
    h, wd = dx.shape[1], dx.shape[2]
    for ci_abs in prange(cin):
        g = ci_abs // cin_g
        ci = ci_abs - g * cin_g
        buf = np.zeros((h, wd))
        for co in range(g * cout_g, (g + 1) * cout_g):
            for i in range(kh):
                off_h = i * dh - ph
                ho_lo, ho_hi = _tap_range(off_h, sh, h, out_h)
                for j in range(kw):
                    off_w = j * dw - pw
                    wo_lo, wo_hi = _tap_range(off_w, sw, wd, out_w)
                    coeff = w[co, ci, i, j]
                    for ho in range(ho_lo, ho_hi):
                        drow = buf[ho * sh + off_h]
                        grow = grad_out[co, ho]
                        for wo in range(wo_lo, wo_hi):
                            drow[wo * sw + off_w] += coeff * grow[wo]
        for r in range(h):
            for k in range(wd):
                dx[ci_abs, r, k] = buf[r, k]


def conv2d_forward(x, w, stride, dilation, padding, groups):
    if _is_pointwise(w.shape, stride, padding):
        return reference.conv2d_forward(x, w, stride, dilation, padding, groups)
    kh, kw = w.shape[2], w.shape[3]
    out_h = (x.shape[1] + 2 * padding[0] - dilation[0] * (kh - 1) - 1) // stride[0] + 1
    out_w = (x.shape[2] + 2 * padding[1] - dilation[1] * (kw - 1) - 1) // stride[1] + 1
    out = np.zeros((w.shape[0], out_h, out_w))
    _fwd(x, w, out, stride[0], stride[1], dilation[0], dilation[1],
         padding[0], padding[1], x.shape[0] // groups, w.shape[0] // groups)
    return out


def conv2d_backward_weight(grad_out, x, w_shape, stride, dilation, padding, groups):
    if _is_pointwise(w_shape, stride, padding):
        return reference.conv2d_backward_weight(grad_out, x, w_shape, stride,
                                                dilation, padding, groups)
    dw_ = np.empty(w_shape)
    _bwd_weight(grad_out, x, dw_, stride[0], stride[1], dilation[0], dilation[1],
                padding[0], padding[1], x.shape[0] // groups, w_shape[0] // groups)
    return dw_


def conv2d_backward_input(grad_out, w, x_shape, stride, dilation, padding, groups):
    if _is_pointwise(w.shape, stride, padding):
        return reference.conv2d_backward_input(grad_out, w, x_shape, stride,
                                               dilation, padding, groups)
    dx = np.zeros(x_shape)
    _bwd_input(grad_out, w, dx, stride[0], stride[1], dilation[0], dilation[1],
               padding[0], padding[1], x_shape[0] // groups, w.shape[0] // groups)
    return dx
