"""Numba-jitted convolution kernels.

Same call surface as numpy_backend. Three loop families cover all twelve
kernel roles, each picked by benchmark on encoder-sized workloads:

* gather (1D): padded input split into ``stride`` contiguous phase
  buffers so the inner accumulation is unit-stride saxpy
* scatter: transposed-conv forward and conv input gradients, phase-split
  on the output side
* im2col assembly: jitted window gather feeding one BLAS matmul in the
  wrapper, for the GEMM-dominated roles (2D gather, weight gradients)

prange parallelism only ever lets one thread own an output element, so
results are bitwise reproducible run to run.
"""

import numpy as np
from numba import njit, prange

NAME = "numba"

_JIT = dict(parallel=True, fastmath=False, cache=True)


@njit(**_JIT)
def _gather1d(xp, w, stride, out_len):
    # y[n,cd,i] = sum_{cs,k} xp[n,cs,i*stride+k] * w[cd,cs,k]
    n_b, cs_n, lp = xp.shape
    cd_n, _, k_n = w.shape
    nph = (lp + stride - 1) // stride
    y = np.empty((n_b, cd_n, out_len), dtype=xp.dtype)
    for n in prange(n_b):
        xs = np.zeros((stride, cs_n, nph), dtype=xp.dtype)
        for cs in range(cs_n):
            for ph in range(stride):
                m = (lp - ph + stride - 1) // stride
                for t in range(m):
                    xs[ph, cs, t] = xp[n, cs, ph + t * stride]
        for cd in range(cd_n):
            acc = np.zeros(out_len, dtype=xp.dtype)
            for cs in range(cs_n):
                for k in range(k_n):
                    wv = w[cd, cs, k]
                    src = xs[k % stride, cs]
                    off = k // stride
                    for i in range(out_len):
                        acc[i] += wv * src[i + off]
            y[n, cd] = acc
    return y


@njit(**_JIT)
def _scatter1d(src, w, stride, span):
    # buf[n,cd,i*stride+k] += src[n,cs,i] * w[cs,cd,k]
    n_b, cs_n, ls = src.shape
    _, cd_n, k_n = w.shape
    nph = (span + stride - 1) // stride + 1
    buf = np.zeros((n_b, cd_n, span), dtype=src.dtype)
    for n in prange(n_b):
        outs = np.zeros((stride, cd_n, nph), dtype=src.dtype)
        for cd in range(cd_n):
            for cs in range(cs_n):
                for k in range(k_n):
                    wv = w[cs, cd, k]
                    dst = outs[k % stride, cd]
                    off = k // stride
                    row = src[n, cs]
                    for i in range(ls):
                        dst[i + off] += wv * row[i]
        for cd in range(cd_n):
            for ph in range(stride):
                m = (span - ph + stride - 1) // stride
                for t in range(m):
                    buf[n, cd, ph + t * stride] = outs[ph, cd, t]
    return buf


@njit(**_JIT)
def _scatter2d(src, w, stride, span_h, span_w):
    n_b, cs_n, hs, ws = src.shape
    _, cd_n, kh_n, kw_n = w.shape
    nph = (span_w + stride - 1) // stride + 1
    buf = np.zeros((n_b, cd_n, span_h, span_w), dtype=src.dtype)
    for n in prange(n_b):
        outs = np.zeros((stride, cd_n, span_h, nph), dtype=src.dtype)
        for cd in range(cd_n):
            for cs in range(cs_n):
                for kh in range(kh_n):
                    for kw in range(kw_n):
                        wv = w[cs, cd, kh, kw]
                        ph = kw % stride
                        off = kw // stride
                        for i in range(hs):
                            dst = outs[ph, cd, i * stride + kh]
                            row = src[n, cs, i]
                            for j in range(ws):
                                dst[j + off] += wv * row[j]
        for cd in range(cd_n):
            for r in range(span_h):
                for ph in range(stride):
                    m = (span_w - ph + stride - 1) // stride
                    for t in range(m):
                        buf[n, cd, r, ph + t * stride] = outs[ph, cd, r, t]
    return buf


@njit(**_JIT)
def _im2colT1d(xp, stride, k_n, out_len):
    # colsT[cs*k + k', n*out_len + i] = xp[n, cs, i*stride + k']
    n_b, cs_n, lp = xp.shape
    nph = (lp + stride - 1) // stride
    xs = np.zeros((stride, n_b, cs_n, nph), dtype=xp.dtype)
    for n in prange(n_b):
        for cs in range(cs_n):
            src = xp[n, cs]
            for ph in range(stride):
                m = (lp - ph + stride - 1) // stride
                dst = xs[ph, n, cs]
                for t in range(m):
                    dst[t] = src[ph + t * stride]
    cols = np.empty((cs_n * k_n, n_b * out_len), dtype=xp.dtype)
    for r in prange(cs_n * k_n):
        cs = r // k_n
        k = r % k_n
        ph = k % stride
        off = k // stride
        dst = cols[r]
        for n in range(n_b):
            src = xs[ph, n, cs]
            base = n * out_len
            for i in range(out_len):
                dst[base + i] = src[i + off]
    return cols


@njit(**_JIT)
def _im2colT2d(xp, stride, k_n, out_h, out_w):
    # colsT[(cs*k + kh)*k + kw, (n*out_h + i)*out_w + j] = xp[n, cs, i*s+kh, j*s+kw]
    n_b, cs_n, hp, wp = xp.shape
    nph = (wp + stride - 1) // stride
    xs = np.zeros((stride, n_b, cs_n, hp, nph), dtype=xp.dtype)
    for n in prange(n_b):
        for cs in range(cs_n):
            for r in range(hp):
                src = xp[n, cs, r]
                for ph in range(stride):
                    m = (wp - ph + stride - 1) // stride
                    dst = xs[ph, n, cs, r]
                    for t in range(m):
                        dst[t] = src[ph + t * stride]
    cols = np.empty((cs_n * k_n * k_n, n_b * out_h * out_w), dtype=xp.dtype)
    for rr in prange(cs_n * k_n * k_n):
        cs = rr // (k_n * k_n)
        kh = (rr // k_n) % k_n
        kw = rr % k_n
        ph = kw % stride
        off = kw // stride
        dst = cols[rr]
        for n in range(n_b):
            for i in range(out_h):
                src = xs[ph, n, cs, i * stride + kh]
                base = (n * out_h + i) * out_w
                for j in range(out_w):
                    dst[base + j] = src[j + off]
    return cols


def _pad1d(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad)))


def _pad2d(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _slice1d(buf, pad, out_len):
    span = buf.shape[2]
    out = np.zeros(buf.shape[:2] + (out_len,), dtype=buf.dtype)
    hi = min(span, pad + out_len)
    if hi > pad:
        out[:, :, :hi - pad] = buf[:, :, pad:hi]
    return out


def _gybuf1d(gy, stride, pad, in_len, k):
    n, co, ly = gy.shape
    span = (in_len - 1) * stride + k
    buf = np.zeros((n, co, span), dtype=gy.dtype)
    m = min(ly, span - pad)
    buf[:, :, pad:pad + m] = gy[:, :, :m]
    return buf


def _gybuf2d(gy, stride, pad, in_h, in_w, k):
    n, co, hy, wy = gy.shape
    span_h = (in_h - 1) * stride + k
    span_w = (in_w - 1) * stride + k
    buf = np.zeros((n, co, span_h, span_w), dtype=gy.dtype)
    mh = min(hy, span_h - pad)
    mw = min(wy, span_w - pad)
    buf[:, :, pad:pad + mh, pad:pad + mw] = gy[:, :, :mh, :mw]
    return buf


def conv1d_forward(x, w, stride, pad):
    lo = (x.shape[2] + 2 * pad - w.shape[2]) // stride + 1
    return _gather1d(_pad1d(x, pad), np.ascontiguousarray(w), stride, lo)


def conv1d_input_grad(gy, w, stride, pad, in_len):
    span = (gy.shape[2] - 1) * stride + w.shape[2]
    buf = _scatter1d(np.ascontiguousarray(gy), np.ascontiguousarray(w), stride, span)
    return _slice1d(buf, pad, in_len)


def conv1d_weight_grad(x, gy, stride, pad, ksize):
    n, co, lo = gy.shape
    ci = x.shape[1]
    cols_t = _im2colT1d(_pad1d(x, pad), stride, ksize, lo)
    g2 = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(co, n * lo)
    return (g2 @ cols_t.T).reshape(co, ci, ksize)


def tconv1d_forward(x, w, stride, pad, out_len):
    span = (x.shape[2] - 1) * stride + w.shape[2]
    buf = _scatter1d(np.ascontiguousarray(x), np.ascontiguousarray(w), stride, span)
    return _slice1d(buf, pad, out_len)


def tconv1d_input_grad(gy, w, stride, pad, in_len):
    buf = _gybuf1d(gy, stride, pad, in_len, w.shape[2])
    # w is (Ci, Co, K): dst channel first, matching the gather weight layout
    return _gather1d(buf, np.ascontiguousarray(w), stride, in_len)


def tconv1d_weight_grad(x, gy, stride, pad, ksize):
    n, ci, in_len = x.shape
    co = gy.shape[1]
    buf = _gybuf1d(gy, stride, pad, in_len, ksize)
    cols_t = _im2colT1d(buf, stride, ksize, in_len)
    x2 = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(ci, n * in_len)
    return (x2 @ cols_t.T).reshape(ci, co, ksize)


def conv2d_forward(x, w, stride, pad):
    n, ci, _, _ = x.shape
    co, _, k, _ = w.shape
    oh = (x.shape[2] + 2 * pad - k) // stride + 1
    ow = (x.shape[3] + 2 * pad - k) // stride + 1
    cols_t = _im2colT2d(_pad2d(x, pad), stride, k, oh, ow)
    y = np.ascontiguousarray(w.reshape(co, ci * k * k)) @ cols_t
    return np.ascontiguousarray(y.reshape(co, n, oh, ow).transpose(1, 0, 2, 3))


def conv2d_input_grad(gy, w, stride, pad, in_hw):
    k = w.shape[2]
    span_h = (gy.shape[2] - 1) * stride + k
    span_w = (gy.shape[3] - 1) * stride + k
    buf = _scatter2d(np.ascontiguousarray(gy), np.ascontiguousarray(w), stride,
                     span_h, span_w)
    out = np.zeros((gy.shape[0], w.shape[1]) + tuple(in_hw), dtype=gy.dtype)
    hi_h = min(span_h, pad + in_hw[0])
    hi_w = min(span_w, pad + in_hw[1])
    if hi_h > pad and hi_w > pad:
        out[:, :, :hi_h - pad, :hi_w - pad] = buf[:, :, pad:hi_h, pad:hi_w]
    return out


def conv2d_weight_grad(x, gy, stride, pad, ksize):
    n, co, oh, ow = gy.shape
    ci = x.shape[1]
    cols_t = _im2colT2d(_pad2d(x, pad), stride, ksize, oh, ow)
    g2 = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(co, n * oh * ow)
    return (g2 @ cols_t.T).reshape(co, ci, ksize, ksize)


def tconv2d_forward(x, w, stride, pad, out_hw):
    k = w.shape[2]
    span_h = (x.shape[2] - 1) * stride + k
    span_w = (x.shape[3] - 1) * stride + k
    buf = _scatter2d(np.ascontiguousarray(x), np.ascontiguousarray(w), stride,
                     span_h, span_w)
    out = np.zeros(x.shape[:1] + (w.shape[1],) + tuple(out_hw), dtype=x.dtype)
    hi_h = min(span_h, pad + out_hw[0])
    hi_w = min(span_w, pad + out_hw[1])
    if hi_h > pad and hi_w > pad:
        out[:, :, :hi_h - pad, :hi_w - pad] = buf[:, :, pad:hi_h, pad:hi_w]
    return out


def tconv2d_input_grad(gy, w, stride, pad, in_hw):
    ih, iw = in_hw
    n = gy.shape[0]
    ci, co, k, _ = w.shape
    buf = _gybuf2d(gy, stride, pad, ih, iw, k)
    cols_t = _im2colT2d(buf, stride, k, ih, iw)
    gx = np.ascontiguousarray(w.reshape(ci, co * k * k)) @ cols_t
    return np.ascontiguousarray(gx.reshape(ci, n, ih, iw).transpose(1, 0, 2, 3))


def tconv2d_weight_grad(x, gy, stride, pad, ksize):
    n, ci, ih, iw = x.shape
    co = gy.shape[1]
    buf = _gybuf2d(gy, stride, pad, ih, iw, ksize)
    cols_t = _im2colT2d(buf, stride, ksize, ih, iw)
    x2 = np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(ci, n * ih * iw)
    return (x2 @ cols_t.T).reshape(ci, co, ksize, ksize)
