"""Integrated-gradients attribution through the frozen model.

The attributed function F is the classification logit of the head on the
same features fine-tuning uses: the modality's posterior mean, or the
product-of-experts fusion (with prior) in joint mode. Attributions follow
the straight path from a baseline (zero tensors by default), with the
path integral approximated by a right-endpoint Riemann sum whose residual
against the completeness identity is reported.
"""

from dataclasses import dataclass

import numpy as np

from . import network
from .errors import ConfigError, DataError, NumericError
from .gaussian import fuse_arrays, fuse_arrays_backward

MIN_STEPS = 8


@dataclass(frozen=True)
class AttributionMap:
    """Per-element attributions for the modalities that fed the logit."""

    image: np.ndarray | None
    signal: np.ndarray | None
    baseline_image: np.ndarray | None
    baseline_signal: np.ndarray | None
    steps: int
    logit: float
    baseline_logit: float
    completeness_residual: float

    @property
    def delta(self) -> float:
        return self.logit - self.baseline_logit


def _logit_and_input_grads(net: network.Network, images_cf, signals_cf, mode):
    """Batched logit F plus dF/dinput for each row; eval-mode head."""
    scratch = network.zero_grads(net.params)
    caches = {}
    mus, lvs = [], []
    if mode in ("cxr", "joint"):
        mu, lv, cache = net.enc_forward("cxr", images_cf)
        caches["cxr"] = cache
        mus.append(mu)
        lvs.append(lv)
    if mode in ("ecg", "joint"):
        mu, lv, cache = net.enc_forward("ecg", signals_cf)
        caches["ecg"] = cache
        mus.append(mu)
        lvs.append(lv)

    if mode == "joint":
        feats, _, fuse_cache = fuse_arrays(mus, lvs, include_prior=True)
    else:
        feats = mus[0]
    logits, head_cache = net.head_forward(feats, dropout_mask=None)
    d_feats = net.head_backward(head_cache, np.ones_like(logits), scratch)

    d_img = d_sig = None
    if mode == "joint":
        d_mus, d_lvs = fuse_arrays_backward(fuse_cache, d_feats, np.zeros_like(d_feats))
    else:
        d_mus, d_lvs = [d_feats], [np.zeros_like(d_feats)]
    i = 0
    if mode in ("cxr", "joint"):
        d_img = net.enc_backward("cxr", caches["cxr"], d_mus[i], d_lvs[i], scratch)
        i += 1
    if mode in ("ecg", "joint"):
        d_sig = net.enc_backward("ecg", caches["ecg"], d_mus[i], d_lvs[i], scratch)
    return logits, d_img, d_sig


def integrated_gradients(net: network.Network, sample, mode: str,
                         baseline_image=None, baseline_signal=None,
                         steps: int = 64, batch_size: int = 64) -> AttributionMap:
    """Attribute the head logit to the input elements of one sample.

    ``sample`` needs the modalities the mode uses. Baselines default to
    zero tensors. ``steps`` is the Riemann-sum resolution (>= 8).
    """
    if mode not in network.MODALITY_MODES:
        raise ConfigError(f"unknown modality mode {mode!r}")
    if steps < MIN_STEPS:
        raise ConfigError(f"steps must be >= {MIN_STEPS}")

    use_img = mode in ("cxr", "joint")
    use_sig = mode in ("ecg", "joint")
    if use_img and sample.image is None:
        raise DataError(f"sample {sample.id!r} lacks the image modality")
    if use_sig and sample.signal is None:
        raise DataError(f"sample {sample.id!r} lacks the signal modality")

    dtype = net.dtype
    img = img0 = sig = sig0 = None
    if use_img:
        img = net.images_to_cf(np.asarray(sample.image)[None])[0]
        img0 = (np.zeros_like(img) if baseline_image is None
                else net.images_to_cf(np.asarray(baseline_image)[None])[0])
        if img0.shape != img.shape:
            raise ConfigError("image baseline shape mismatch")
    if use_sig:
        sig = np.ascontiguousarray(np.asarray(sample.signal, dtype=dtype))
        sig0 = (np.zeros_like(sig) if baseline_signal is None
                else np.asarray(baseline_signal, dtype=dtype))
        if sig0.shape != sig.shape:
            raise ConfigError("signal baseline shape mismatch")

    alphas = np.arange(1, steps + 1, dtype=np.float64) / steps
    grad_img_sum = np.zeros_like(img, dtype=np.float64) if use_img else None
    grad_sig_sum = np.zeros_like(sig, dtype=np.float64) if use_sig else None
    logit_at_x = None

    for lo in range(0, steps, batch_size):
        chunk = alphas[lo:lo + batch_size]
        a_img = a_sig = None
        if use_img:
            a_img = (img0[None] + chunk[:, None, None, None] * (img - img0)[None]).astype(dtype)
        if use_sig:
            a_sig = (sig0[None] + chunk[:, None, None] * (sig - sig0)[None]).astype(dtype)
        logits, d_img, d_sig = _logit_and_input_grads(net, a_img, a_sig, mode)
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite logit along the attribution path")
        if use_img:
            if not np.all(np.isfinite(d_img)):
                raise NumericError("non-finite image gradient along the path")
            grad_img_sum += d_img.sum(axis=0, dtype=np.float64)
        if use_sig:
            if not np.all(np.isfinite(d_sig)):
                raise NumericError("non-finite signal gradient along the path")
            grad_sig_sum += d_sig.sum(axis=0, dtype=np.float64)
        if lo + len(chunk) == steps:
            logit_at_x = float(logits[-1])  # alpha == 1 is the sample itself

    b_img = (img0[None].astype(dtype)) if use_img else None
    b_sig = (sig0[None].astype(dtype)) if use_sig else None
    base_logits, _, _ = _logit_and_input_grads(net, b_img, b_sig, mode)
    logit_at_base = float(base_logits[0])

    attr_img = attr_sig = None
    total = 0.0
    if use_img:
        attr_img_cf = (img - img0).astype(np.float64) * (grad_img_sum / steps)
        total += float(attr_img_cf.sum())
        attr_img = np.ascontiguousarray(attr_img_cf.transpose(1, 2, 0))
    if use_sig:
        attr_sig_arr = (sig - sig0).astype(np.float64) * (grad_sig_sum / steps)
        total += float(attr_sig_arr.sum())
        attr_sig = attr_sig_arr

    residual = abs(total - (logit_at_x - logit_at_base))
    return AttributionMap(
        image=attr_img.astype(np.float32) if attr_img is not None else None,
        signal=attr_sig.astype(np.float32) if attr_sig is not None else None,
        baseline_image=(np.ascontiguousarray(img0.transpose(1, 2, 0)).astype(np.float32)
                        if use_img else None),
        baseline_signal=sig0.astype(np.float32) if use_sig else None,
        steps=steps,
        logit=logit_at_x,
        baseline_logit=logit_at_base,
        completeness_residual=residual,
    )


def write_pgm(path, plane) -> None:
    """8-bit P5 graymap of a 2D array, symmetric about zero attribution."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError("PGM writer needs a 2D array")
    scale = np.max(np.abs(arr))
    norm = 0.5 + 0.5 * (arr / scale) if scale > 0 else np.full_like(arr, 0.5)
    pixels = np.clip(np.rint(norm * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())
