"""Kernel benchmark: numba-jitted loops versus the pure-numpy fallback.

Times the six convolution kernel roles on encoder-sized workloads and
reports throughput for each available backend, so the speedup of the
jitted path on the current machine is visible before long runs.
"""

import time

import numpy as np

from . import kernels


def _workloads(size: str):
    # (label, builder) pairs; builder returns (fn_name, args, macs)
    if size == "desk":
        n, hw, sig_len = 32, 32, 2048
    elif size == "small":
        n, hw, sig_len = 8, 16, 256
    else:
        raise ValueError(f"unknown bench size {size!r}")
    rng = np.random.default_rng(0)
    ci, co, k, s, p = 16, 32, 3, 2, 1
    x1 = rng.standard_normal((n, ci, sig_len)).astype(np.float32)
    w1 = rng.standard_normal((co, ci, k)).astype(np.float32)
    lo1 = (sig_len + 2 * p - k) // s + 1
    gy1 = rng.standard_normal((n, co, lo1)).astype(np.float32)
    wt1 = rng.standard_normal((ci, co, k)).astype(np.float32)
    tout1 = (sig_len - 1) * s - 2 * p + k + 1

    x2 = rng.standard_normal((n, ci, hw, hw)).astype(np.float32)
    w2 = rng.standard_normal((co, ci, k, k)).astype(np.float32)
    lo2 = (hw + 2 * p - k) // s + 1
    gy2 = rng.standard_normal((n, co, lo2, lo2)).astype(np.float32)

    m1 = n * co * lo1 * ci * k
    m2 = n * co * lo2 * lo2 * ci * k * k
    mt = n * co * sig_len * ci * k
    return [
        ("conv1d_forward", lambda be: be.conv1d_forward(x1, w1, s, p), m1),
        ("conv1d_input_grad", lambda be: be.conv1d_input_grad(gy1, w1, s, p, sig_len), m1),
        ("conv1d_weight_grad", lambda be: be.conv1d_weight_grad(x1, gy1, s, p, k), m1),
        ("tconv1d_forward", lambda be: be.tconv1d_forward(x1, wt1, s, p, tout1), mt),
        ("conv2d_forward", lambda be: be.conv2d_forward(x2, w2, s, p), m2),
        ("conv2d_input_grad", lambda be: be.conv2d_input_grad(gy2, w2, s, p, (hw, hw)), m2),
        ("conv2d_weight_grad", lambda be: be.conv2d_weight_grad(x2, gy2, s, p, k), m2),
    ]


def run_bench(size: str = "desk", repeats: int = 5, backends=None):
    """Returns rows of (kernel, backend, ms_per_call, gmacs_per_s)."""
    names = backends or kernels.available_backends()
    rows = []
    for label, fn, macs in _workloads(size):
        for name in names:
            be = kernels.resolve(name)
            fn(be)  # warm-up / jit compile
            t0 = time.perf_counter()
            for _ in range(repeats):
                fn(be)
            dt = (time.perf_counter() - t0) / repeats
            rows.append((label, name, dt * 1e3, macs / dt / 1e9))
    return rows


def format_table(rows) -> str:
    lines = [f"{'kernel':<22} {'backend':<8} {'ms/call':>10} {'GMAC/s':>8}"]
    by_kernel = {}
    for label, name, ms, gmacs in rows:
        lines.append(f"{label:<22} {name:<8} {ms:>10.2f} {gmacs:>8.2f}")
        by_kernel.setdefault(label, {})[name] = ms
    speedups = []
    for label, t in by_kernel.items():
        if "numba" in t and "numpy" in t:
            speedups.append(t["numpy"] / t["numba"])
    if speedups:
        geo = float(np.exp(np.mean(np.log(speedups))))
        lines.append(f"geometric-mean numba speedup over numpy: {geo:.2f}x")
    return "\n".join(lines)
