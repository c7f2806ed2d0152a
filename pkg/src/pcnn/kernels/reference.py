"""Pure-numpy convolution kernels (fallback path).

Forward uses a strided im2col view plus einsum; backward scatters per kernel
tap. Shapes follow the op layer: x [Cin,H,W], w [Cout,Cin/groups,kh,kw].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "numpy"


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def _patch_view(xp: np.ndarray, out_h: int, out_w: int, kh: int, kw: int,
                sh: int, sw: int, dh: int, dw: int) -> np.ndarray:
    sc, srow, scol = xp.strides
    return as_strided(
        xp,
        shape=(xp.shape[0], out_h, out_w, kh, kw),
        strides=(sc, sh * srow, sw * scol, dh * srow, dw * scol),
        writeable=False,
    )


def conv2d_forward(x, w, stride, dilation, padding, groups):
    cout = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = stride
    dh, dw = dilation
    ph, pw = padding
    xp = _pad(x, ph, pw)
    out_h = (x.shape[1] + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    out_w = (x.shape[2] + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    view = _patch_view(xp, out_h, out_w, kh, kw, sh, sw, dh, dw)
    cin_g = x.shape[0] // groups
    cout_g = cout // groups
    xv = view.reshape(groups, cin_g, out_h, out_w, kh, kw)
    wg = w.reshape(groups, cout_g, cin_g, kh, kw)
    out = np.einsum("gihwuv,goiuv->gohw", xv, wg, optimize=True)
    return np.ascontiguousarray(out.reshape(cout, out_h, out_w))


def conv2d_backward_weight(grad_out, x, w_shape, stride, dilation, padding, groups):
    cout, cin_g, kh, kw = w_shape
    sh, sw = stride
    dh, dw = dilation
    ph, pw = padding
    xp = _pad(x, ph, pw)
    out_h, out_w = grad_out.shape[1], grad_out.shape[2]
    view = _patch_view(xp, out_h, out_w, kh, kw, sh, sw, dh, dw)
    xv = view.reshape(groups, cin_g, out_h, out_w, kh, kw)
    gg = grad_out.reshape(groups, cout // groups, out_h, out_w)
    dw_ = np.einsum("gihwuv,gohw->goiuv", xv, gg, optimize=True)
    return np.ascontiguousarray(dw_.reshape(w_shape))


def conv2d_backward_input(grad_out, w, x_shape, stride, dilation, padding, groups):
    cin, h, wd = x_shape
    kh, kw = w.shape[2], w.shape[3]
    sh, sw = stride
    dh, dw = dilation
    ph, pw = padding
    out_h, out_w = grad_out.shape[1], grad_out.shape[2]
    cin_g = cin // groups
    gg = grad_out.reshape(groups, w.shape[0] // groups, out_h, out_w)
    wg = w.reshape(groups, w.shape[0] // groups, cin_g, kh, kw)
    dxp = np.zeros((cin, h + 2 * ph, wd + 2 * pw))
    dxp_g = dxp.reshape(groups, cin_g, h + 2 * ph, wd + 2 * pw)
    for i in range(kh):
        for j in range(kw):
            # one kernel tap touches a disjoint strided grid of input pixels
            contrib = np.einsum("goi,gohw->gihw", wg[:, :, :, i, j], gg, optimize=True)
            rows = slice(i * dh, i * dh + sh * out_h, sh)
            cols = slice(j * dw, j * dw + sw * out_w, sw)
            dxp_g[:, :, rows, cols] += contrib
    if ph or pw:
        return np.ascontiguousarray(dxp[:, ph:ph + h, pw:pw + wd])
    return dxp
