"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback path for machines without numba; also the reference the numba
backend is cross-checked against. All functions are batched and
channels-first:

    conv1d   x (N, Ci, L),  w (Co, Ci, K)
    conv2d   x (N, Ci, H, W), w (Co, Ci, K, K)
    tconv1d  x (N, Ci, L),  w (Ci, Co, K)
    tconv2d  x (N, Ci, H, W), w (Ci, Co, K, K)

Transposed ops take the target output extent explicitly, which encodes
any output_padding. dtype (float32/float64) is preserved.
"""

import numpy as np

NAME = "numpy"

_swv = np.lib.stride_tricks.sliding_window_view


def _gather1d(xp, w, stride, out_len):
    # y[n,cd,i] = sum_{cs,k} xp[n,cs,i*stride+k] * w[cd,cs,k]
    n, cs, _ = xp.shape
    cd, _, k = w.shape
    win = _swv(xp, k, axis=2)[:, :, ::stride][:, :, :out_len]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * out_len, cs * k)
    y = cols @ w.reshape(cd, cs * k).T
    return np.ascontiguousarray(y.reshape(n, out_len, cd).transpose(0, 2, 1))


def _scatter1d(src, w, stride, pad, out_len):
    # out[n,cd,i*stride-pad+k] += src[n,cs,i] * w[cs,cd,k]
    n, cs, ls = src.shape
    _, cd, k = w.shape
    span = (ls - 1) * stride + k
    buf = np.zeros((n, cd, span), dtype=src.dtype)
    flat = src.transpose(0, 2, 1)  # (n, ls, cs)
    for kk in range(k):
        contrib = flat @ w[:, :, kk]  # (n, ls, cd)
        buf[:, :, kk:kk + (ls - 1) * stride + 1:stride] += contrib.transpose(0, 2, 1)
    out = np.zeros((n, cd, out_len), dtype=src.dtype)
    hi = min(span, pad + out_len)
    if hi > pad:
        out[:, :, :hi - pad] = buf[:, :, pad:hi]
    return out


def _gybuf1d(gy, stride, pad, in_len, k):
    # lay gy into the zero buffer the matching scatter wrote through
    n, co, ly = gy.shape
    span = (in_len - 1) * stride + k
    buf = np.zeros((n, co, span), dtype=gy.dtype)
    m = min(ly, span - pad)
    buf[:, :, pad:pad + m] = gy[:, :, :m]
    return buf


def conv1d_forward(x, w, stride, pad):
    lo = (x.shape[2] + 2 * pad - w.shape[2]) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    return _gather1d(xp, w, stride, lo)


def conv1d_input_grad(gy, w, stride, pad, in_len):
    # w (Co, Ci, K) already matches the (src-channel, dst-channel) scatter layout
    return _scatter1d(gy, w, stride, pad, in_len)


def conv1d_weight_grad(x, gy, stride, pad, ksize):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    lo = gy.shape[2]
    win = _swv(xp, ksize, axis=2)[:, :, ::stride][:, :, :lo]  # (N, Ci, Lo, K)
    return np.tensordot(gy, win, axes=([0, 2], [0, 2]))  # (Co, Ci, K)


def tconv1d_forward(x, w, stride, pad, out_len):
    return _scatter1d(x, w, stride, pad, out_len)


def tconv1d_input_grad(gy, w, stride, pad, in_len):
    buf = _gybuf1d(gy, stride, pad, in_len, w.shape[2])
    ci, co, k = w.shape
    win = _swv(buf, k, axis=2)[:, :, ::stride][:, :, :in_len]
    n = gy.shape[0]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * in_len, co * k)
    gx = cols @ w.reshape(ci, co * k).T
    return np.ascontiguousarray(gx.reshape(n, in_len, ci).transpose(0, 2, 1))


def tconv1d_weight_grad(x, gy, stride, pad, ksize):
    in_len = x.shape[2]
    buf = _gybuf1d(gy, stride, pad, in_len, ksize)
    win = _swv(buf, ksize, axis=2)[:, :, ::stride][:, :, :in_len]  # (N, Co, Li, K)
    return np.tensordot(x, win, axes=([0, 2], [0, 2]))  # (Ci, Co, K)


def _gather2d(xp, w, stride, out_h, out_w):
    n, cs, _, _ = xp.shape
    cd, _, kh, kw = w.shape
    win = _swv(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n * out_h * out_w, cs * kh * kw)
    y = cols @ w.reshape(cd, cs * kh * kw).T
    return np.ascontiguousarray(y.reshape(n, out_h, out_w, cd).transpose(0, 3, 1, 2))


def _scatter2d(src, w, stride, pad, out_h, out_w):
    n, cs, hs, ws = src.shape
    _, cd, kh, kw = w.shape
    span_h = (hs - 1) * stride + kh
    span_w = (ws - 1) * stride + kw
    buf = np.zeros((n, cd, span_h, span_w), dtype=src.dtype)
    flat = src.transpose(0, 2, 3, 1)  # (n, hs, ws, cs)
    for ki in range(kh):
        for kj in range(kw):
            contrib = flat @ w[:, :, ki, kj]  # (n, hs, ws, cd)
            buf[:, :, ki:ki + (hs - 1) * stride + 1:stride,
                kj:kj + (ws - 1) * stride + 1:stride] += contrib.transpose(0, 3, 1, 2)
    out = np.zeros((n, cd, out_h, out_w), dtype=src.dtype)
    hi_h = min(span_h, pad + out_h)
    hi_w = min(span_w, pad + out_w)
    if hi_h > pad and hi_w > pad:
        out[:, :, :hi_h - pad, :hi_w - pad] = buf[:, :, pad:hi_h, pad:hi_w]
    return out


def _gybuf2d(gy, stride, pad, in_h, in_w, kh, kw):
    n, co, hy, wy = gy.shape
    span_h = (in_h - 1) * stride + kh
    span_w = (in_w - 1) * stride + kw
    buf = np.zeros((n, co, span_h, span_w), dtype=gy.dtype)
    mh = min(hy, span_h - pad)
    mw = min(wy, span_w - pad)
    buf[:, :, pad:pad + mh, pad:pad + mw] = gy[:, :, :mh, :mw]
    return buf


def conv2d_forward(x, w, stride, pad):
    k = w.shape[2]
    oh = (x.shape[2] + 2 * pad - k) // stride + 1
    ow = (x.shape[3] + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return _gather2d(xp, w, stride, oh, ow)


def conv2d_input_grad(gy, w, stride, pad, in_hw):
    return _scatter2d(gy, w, stride, pad, in_hw[0], in_hw[1])


def conv2d_weight_grad(x, gy, stride, pad, ksize):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = gy.shape[2], gy.shape[3]
    win = _swv(xp, (ksize, ksize), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # (Co, Ci, K, K)


def tconv2d_forward(x, w, stride, pad, out_hw):
    return _scatter2d(x, w, stride, pad, out_hw[0], out_hw[1])


def tconv2d_input_grad(gy, w, stride, pad, in_hw):
    ih, iw = in_hw
    ci, co, kh, kw = w.shape
    buf = _gybuf2d(gy, stride, pad, ih, iw, kh, kw)
    win = _swv(buf, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ih, :iw]
    n = gy.shape[0]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ih * iw, co * kh * kw)
    gx = cols @ w.reshape(ci, co * kh * kw).T
    return np.ascontiguousarray(gx.reshape(n, ih, iw, ci).transpose(0, 3, 1, 2))


def tconv2d_weight_grad(x, gy, stride, pad, ksize):
    ih, iw = x.shape[2], x.shape[3]
    buf = _gybuf2d(gy, stride, pad, ih, iw, ksize, ksize)
    win = _swv(buf, (ksize, ksize), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ih, :iw]
    return np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))  # (Ci, Co, K, K)
