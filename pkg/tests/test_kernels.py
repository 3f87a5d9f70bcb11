"""Cross-backend agreement and finite-difference soundness of the
convolution kernels. The numba and numpy implementations are written
independently, so agreement on random problems is a strong check."""

import numpy as np
import pytest

from tristream.kernels import numba_backend, numpy_backend

BACKENDS = [numpy_backend, numba_backend]

CASES_1D = [
    (3, 2, 5, 11, 3, 2, 1),
    (2, 4, 3, 9, 4, 3, 0),
    (1, 1, 2, 7, 1, 1, 0),
    (2, 3, 2, 8, 5, 2, 2),
]
CASES_2D = [
    (2, 2, 3, 8, 9, 3, 2, 1),
    (1, 3, 2, 6, 6, 2, 2, 0),
    (2, 1, 4, 7, 5, 3, 1, 1),
]


def _tols(dtype):
    return dict(rtol=1e-4, atol=1e-5) if dtype == np.float32 else dict(rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("case", CASES_1D)
def test_backends_agree_1d(dtype, case):
    n, ci, co, length, k, s, p = case
    rng = np.random.default_rng(hash(case) % 2**32)
    tol = _tols(dtype)
    x = rng.standard_normal((n, ci, length)).astype(dtype)
    w = rng.standard_normal((co, ci, k)).astype(dtype)
    y_ref = numpy_backend.conv1d_forward(x, w, s, p)
    np.testing.assert_allclose(numba_backend.conv1d_forward(x, w, s, p), y_ref, **tol)
    gy = rng.standard_normal(y_ref.shape).astype(dtype)
    np.testing.assert_allclose(numba_backend.conv1d_input_grad(gy, w, s, p, length),
                               numpy_backend.conv1d_input_grad(gy, w, s, p, length), **tol)
    np.testing.assert_allclose(numba_backend.conv1d_weight_grad(x, gy, s, p, k),
                               numpy_backend.conv1d_weight_grad(x, gy, s, p, k), **tol)
    wt = rng.standard_normal((ci, co, k)).astype(dtype)
    for extra in range(min(s, 2)):
        out_len = (length - 1) * s - 2 * p + k + extra
        if out_len < 1:
            continue
        t_ref = numpy_backend.tconv1d_forward(x, wt, s, p, out_len)
        np.testing.assert_allclose(numba_backend.tconv1d_forward(x, wt, s, p, out_len),
                                   t_ref, **tol)
        gyt = rng.standard_normal(t_ref.shape).astype(dtype)
        np.testing.assert_allclose(
            numba_backend.tconv1d_input_grad(gyt, wt, s, p, length),
            numpy_backend.tconv1d_input_grad(gyt, wt, s, p, length), **tol)
        np.testing.assert_allclose(
            numba_backend.tconv1d_weight_grad(x, gyt, s, p, k),
            numpy_backend.tconv1d_weight_grad(x, gyt, s, p, k), **tol)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("case", CASES_2D)
def test_backends_agree_2d(dtype, case):
    n, ci, co, h, w_, k, s, p = case
    rng = np.random.default_rng(hash(case) % 2**32)
    tol = _tols(dtype)
    x = rng.standard_normal((n, ci, h, w_)).astype(dtype)
    w = rng.standard_normal((co, ci, k, k)).astype(dtype)
    y_ref = numpy_backend.conv2d_forward(x, w, s, p)
    np.testing.assert_allclose(numba_backend.conv2d_forward(x, w, s, p), y_ref, **tol)
    gy = rng.standard_normal(y_ref.shape).astype(dtype)
    np.testing.assert_allclose(numba_backend.conv2d_input_grad(gy, w, s, p, (h, w_)),
                               numpy_backend.conv2d_input_grad(gy, w, s, p, (h, w_)), **tol)
    np.testing.assert_allclose(numba_backend.conv2d_weight_grad(x, gy, s, p, k),
                               numpy_backend.conv2d_weight_grad(x, gy, s, p, k), **tol)
    wt = rng.standard_normal((ci, co, k, k)).astype(dtype)
    for extra in range(min(s, 2)):
        oh = (h - 1) * s - 2 * p + k + extra
        ow = (w_ - 1) * s - 2 * p + k + extra
        if oh < 1 or ow < 1:
            continue
        t_ref = numpy_backend.tconv2d_forward(x, wt, s, p, (oh, ow))
        np.testing.assert_allclose(numba_backend.tconv2d_forward(x, wt, s, p, (oh, ow)),
                                   t_ref, **tol)
        gyt = rng.standard_normal(t_ref.shape).astype(dtype)
        np.testing.assert_allclose(
            numba_backend.tconv2d_input_grad(gyt, wt, s, p, (h, w_)),
            numpy_backend.tconv2d_input_grad(gyt, wt, s, p, (h, w_)), **tol)
        np.testing.assert_allclose(
            numba_backend.tconv2d_weight_grad(x, gyt, s, p, k),
            numpy_backend.tconv2d_weight_grad(x, gyt, s, p, k), **tol)


def _fd_max_err(loss, arrays_and_grads, eps=1e-6):
    worst = 0.0
    for arr, grad in arrays_and_grads:
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + eps
            fp = loss()
            arr[i] = orig - eps
            fm = loss()
            arr[i] = orig
            fd = (fp - fm) / (2 * eps)
            worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8))
    return worst


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.NAME)
def test_conv1d_grads_match_finite_differences(backend):
    rng = np.random.default_rng(0)
    n, ci, co, length, k, s, p = 2, 2, 3, 9, 3, 2, 1
    x = rng.standard_normal((n, ci, length))
    w = rng.standard_normal((co, ci, k))
    gy = rng.standard_normal(backend.conv1d_forward(x, w, s, p).shape)

    def loss():
        return float((backend.conv1d_forward(x, w, s, p) * gy).sum())

    gx = backend.conv1d_input_grad(gy, w, s, p, length)
    gw = backend.conv1d_weight_grad(x, gy, s, p, k)
    assert _fd_max_err(loss, [(x, gx), (w, gw)]) < 1e-6


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.NAME)
def test_tconv2d_grads_match_finite_differences(backend):
    rng = np.random.default_rng(1)
    n, ci, co, h, w_, k, s, p, extra = 1, 2, 2, 4, 5, 3, 2, 1, 1
    oh = (h - 1) * s - 2 * p + k + extra
    ow = (w_ - 1) * s - 2 * p + k + extra
    x = rng.standard_normal((n, ci, h, w_))
    w = rng.standard_normal((ci, co, k, k))
    gy = rng.standard_normal((n, co, oh, ow))

    def loss():
        return float((backend.tconv2d_forward(x, w, s, p, (oh, ow)) * gy).sum())

    gx = backend.tconv2d_input_grad(gy, w, s, p, (h, w_))
    gw = backend.tconv2d_weight_grad(x, gy, s, p, k)
    assert _fd_max_err(loss, [(x, gx), (w, gw)]) < 1e-6


def test_kernels_deterministic_across_calls():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 3, 33)).astype(np.float32)
    w = rng.standard_normal((6, 3, 3)).astype(np.float32)
    for backend in BACKENDS:
        a = backend.conv1d_forward(x, w, 2, 1)
        b = backend.conv1d_forward(x, w, 2, 1)
        assert a.tobytes() == b.tobytes()
