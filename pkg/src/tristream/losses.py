"""Stream objectives for pre-training and the fine-tuning loss.

Three evidence lower bounds are optimized jointly: one per modality on
the raw encoder posterior, and one joint bound whose posterior is the
product-of-experts fusion of both encoders with the prior. Images use a
Bernoulli reconstruction likelihood, signals a unit-variance Gaussian;
log-likelihood and KL are summed over dimensions and averaged over the
batch. The optimizer minimizes the negated total, so every gradient
returned here is of ``-total``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import network
from .errors import ConfigError, ShapeError
from .gaussian import (fuse_arrays, fuse_arrays_backward,
                       kl_standard_normal_arrays, kl_standard_normal_grad_arrays)

BERNOULLI_CLIP = 1e-7
LOG_2PI = math.log(2.0 * math.pi)

STREAM_MODES = ("tri", "joint-only")


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_cxr: float = 1.0
    lambda_ecg: float = 1.0
    # None = resolve to 20% of the planned optimizer steps at training time
    anneal_steps: int | None = None
    max_beta: float = 1.0

    def __post_init__(self):
        if self.lambda_cxr < 0 or self.lambda_ecg < 0:
            raise ConfigError("lambda weights must be >= 0")
        if self.anneal_steps is not None and self.anneal_steps < 1:
            raise ConfigError("anneal_steps must be >= 1")
        if not 0.0 <= self.max_beta <= 1.0:
            raise ConfigError("max_beta must lie in [0, 1]")


@dataclass(frozen=True)
class LossBreakdown:
    recon_cxr: float
    recon_ecg: float
    kl_cxr: float
    kl_ecg: float
    kl_joint: float
    elbo_cxr: float
    elbo_ecg: float
    elbo_joint: float
    total: float

    FIELDS = ("recon_cxr", "recon_ecg", "kl_cxr", "kl_ecg", "kl_joint",
              "elbo_cxr", "elbo_ecg", "elbo_joint", "total")

    @classmethod
    def from_streams(cls, recon_cxr=0.0, recon_ecg=0.0, kl_cxr=0.0, kl_ecg=0.0,
                     kl_joint=0.0, elbo_cxr=0.0, elbo_ecg=0.0, elbo_joint=0.0):
        # fixed summation order: cxr, then ecg, then joint
        total = elbo_cxr + elbo_ecg + elbo_joint
        return cls(recon_cxr, recon_ecg, kl_cxr, kl_ecg, kl_joint,
                   elbo_cxr, elbo_ecg, elbo_joint, total)

    def as_row(self):
        return [getattr(self, f) for f in self.FIELDS]


@dataclass(frozen=True)
class StreamLoss:
    recon_cxr: float
    recon_ecg: float
    kl: float
    elbo: float


def beta_at(step: int, cfg: ObjectiveConfig) -> float:
    """Linear KL warm-up: 0 at step 0, max_beta from anneal_steps on."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    if cfg.anneal_steps is None:
        raise ConfigError("anneal_steps is unresolved; resolve it against the "
                          "planned step count first")
    return min(step / cfg.anneal_steps, 1.0) * cfg.max_beta


def bce_loss(logit: float, label) -> float:
    """Numerically stable binary cross-entropy on a raw logit."""
    logit = float(logit)
    if not math.isfinite(logit):
        raise ConfigError("logit must be finite")
    y = float(label)
    return max(logit, 0.0) - logit * y + math.log1p(math.exp(-abs(logit)))


def bce_loss_batch(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))


def bce_grad_batch(logits, labels):
    # d bce / d logit = sigmoid(logit) - y
    from scipy.special import expit
    return expit(logits) - labels


def _clip_bernoulli(x_hat):
    return np.clip(x_hat, BERNOULLI_CLIP, 1.0 - BERNOULLI_CLIP)


def bernoulli_ll(x, x_hat):
    """Sum over elements of x*log(x_hat) + (1-x)*log(1-x_hat), clamped."""
    xc = _clip_bernoulli(x_hat)
    return np.sum(x * np.log(xc) + (1.0 - x) * np.log1p(-xc),
                  axis=tuple(range(1, x.ndim)))


def bernoulli_ll_grad(x, x_hat):
    xc = _clip_bernoulli(x_hat)
    inside = (x_hat > BERNOULLI_CLIP) & (x_hat < 1.0 - BERNOULLI_CLIP)
    return (x / xc - (1.0 - x) / (1.0 - xc)) * inside


def gaussian_ll(x, x_hat):
    """Unit-variance Gaussian log-likelihood, summed over elements."""
    per_sample = int(np.prod(x.shape[1:]))
    sq = np.sum((x - x_hat) ** 2, axis=tuple(range(1, x.ndim)))
    return -0.5 * sq - 0.5 * per_sample * LOG_2PI


def gaussian_ll_grad(x, x_hat):
    return x - x_hat


def recon_loglik_cxr(x, x_hat) -> float:
    """Bernoulli reconstruction log-likelihood of one image."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {x_hat.shape}")
    return float(bernoulli_ll(x[None], x_hat[None])[0])


def recon_loglik_ecg(x, x_hat) -> float:
    """Unit-variance Gaussian reconstruction log-likelihood of one signal."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"signal shapes differ: {x.shape} vs {x_hat.shape}")
    return float(gaussian_ll(x[None], x_hat[None])[0])


def draw_noise(rng: np.random.Generator, n: int, dim: int, mode: str, dtype):
    """Per-stream reparameterization noise, drawn in a fixed order."""
    eps = {}
    if mode == "tri":
        eps["cxr"] = rng.standard_normal((n, dim)).astype(dtype)
        eps["ecg"] = rng.standard_normal((n, dim)).astype(dtype)
    eps["joint"] = rng.standard_normal((n, dim)).astype(dtype)
    return eps


def total_loss_and_grads(net: network.Network, images_cf, signals_cf, beta: float,
                         cfg: ObjectiveConfig, eps, mode: str = "tri",
                         want_grads: bool = True):
    """Batched tri-stream (or joint-only) objective.

    ``images_cf`` is ``(N, C, H, W)``, ``signals_cf`` is ``(N, 1, L)``;
    ``eps`` maps stream name to ``(N, D)`` noise. Returns
    ``(LossBreakdown, grads-of-minus-total | None)``.
    """
    if mode not in STREAM_MODES:
        raise ConfigError(f"unknown stream mode {mode!r}")
    n = images_cf.shape[0]
    if signals_cf.shape[0] != n:
        raise ShapeError("image/signal batch sizes differ")
    grads = network.zero_grads(net.params) if want_grads else None

    mu_x, lv_x, ca_ex = net.enc_forward("cxr", images_cf)
    mu_g, lv_g, ca_eg = net.enc_forward("ecg", signals_cf)
    d_mu_x = np.zeros_like(mu_x)
    d_lv_x = np.zeros_like(lv_x)
    d_mu_g = np.zeros_like(mu_g)
    d_lv_g = np.zeros_like(lv_g)

    recon_cxr = recon_ecg = kl_cxr = kl_ecg = 0.0
    elbo_cxr = elbo_ecg = 0.0

    if mode == "tri":
        # image-only stream
        z1 = mu_x + np.exp(0.5 * lv_x) * eps["cxr"]
        xhat1, ca_d1 = net.dec_forward("cxr", z1)
        ll1 = bernoulli_ll(images_cf, xhat1)
        kl1 = kl_standard_normal_arrays(mu_x, lv_x)
        recon_cxr = float(ll1.mean())
        kl_cxr = float(kl1.mean())
        elbo_cxr = cfg.lambda_cxr * recon_cxr - beta * kl_cxr
        if want_grads:
            d_xhat1 = (-cfg.lambda_cxr / n) * bernoulli_ll_grad(images_cf, xhat1)
            dz1 = net.dec_backward("cxr", ca_d1, d_xhat1, grads)
            kmu, klv = kl_standard_normal_grad_arrays(mu_x, lv_x)
            d_mu_x += dz1 + (beta / n) * kmu
            d_lv_x += dz1 * (0.5 * np.exp(0.5 * lv_x) * eps["cxr"]) + (beta / n) * klv

        # signal-only stream
        z2 = mu_g + np.exp(0.5 * lv_g) * eps["ecg"]
        ghat2, ca_d2 = net.dec_forward("ecg", z2)
        ll2 = gaussian_ll(signals_cf, ghat2)
        kl2 = kl_standard_normal_arrays(mu_g, lv_g)
        recon_ecg = float(ll2.mean())
        kl_ecg = float(kl2.mean())
        elbo_ecg = cfg.lambda_ecg * recon_ecg - beta * kl_ecg
        if want_grads:
            d_ghat2 = (-cfg.lambda_ecg / n) * gaussian_ll_grad(signals_cf, ghat2)
            dz2 = net.dec_backward("ecg", ca_d2, d_ghat2, grads)
            kmu, klv = kl_standard_normal_grad_arrays(mu_g, lv_g)
            d_mu_g += dz2 + (beta / n) * kmu
            d_lv_g += dz2 * (0.5 * np.exp(0.5 * lv_g) * eps["ecg"]) + (beta / n) * klv

    # joint stream: one latent sample feeds both decoders
    mu_f, lv_f, fuse_cache = fuse_arrays([mu_x, mu_g], [lv_x, lv_g], include_prior=True)
    zj = mu_f + np.exp(0.5 * lv_f) * eps["joint"]
    xhatj, ca_dxj = net.dec_forward("cxr", zj)
    ghatj, ca_dgj = net.dec_forward("ecg", zj)
    llxj = bernoulli_ll(images_cf, xhatj)
    llgj = gaussian_ll(signals_cf, ghatj)
    klj = kl_standard_normal_arrays(mu_f, lv_f)
    kl_joint = float(klj.mean())
    elbo_joint = (cfg.lambda_cxr * float(llxj.mean())
                  + cfg.lambda_ecg * float(llgj.mean())
                  - beta * kl_joint)
    if want_grads:
        d_xhatj = (-cfg.lambda_cxr / n) * bernoulli_ll_grad(images_cf, xhatj)
        d_ghatj = (-cfg.lambda_ecg / n) * gaussian_ll_grad(signals_cf, ghatj)
        dzj = net.dec_backward("cxr", ca_dxj, d_xhatj, grads)
        dzj = dzj + net.dec_backward("ecg", ca_dgj, d_ghatj, grads)
        kmu, klv = kl_standard_normal_grad_arrays(mu_f, lv_f)
        d_mu_f = dzj + (beta / n) * kmu
        d_lv_f = dzj * (0.5 * np.exp(0.5 * lv_f) * eps["joint"]) + (beta / n) * klv
        d_mus, d_lvs = fuse_arrays_backward(fuse_cache, d_mu_f, d_lv_f)
        d_mu_x += d_mus[0]
        d_lv_x += d_lvs[0]
        d_mu_g += d_mus[1]
        d_lv_g += d_lvs[1]

        net.enc_backward("cxr", ca_ex, d_mu_x, d_lv_x, grads)
        net.enc_backward("ecg", ca_eg, d_mu_g, d_lv_g, grads)

    breakdown = LossBreakdown.from_streams(
        recon_cxr=recon_cxr, recon_ecg=recon_ecg, kl_cxr=kl_cxr, kl_ecg=kl_ecg,
        kl_joint=kl_joint, elbo_cxr=elbo_cxr, elbo_ecg=elbo_ecg, elbo_joint=elbo_joint)
    return breakdown, grads


def _single_image_cf(net, image):
    arr = net._check_image(image)
    return net.images_to_cf(arr[None])


def _single_signal_cf(net, signal):
    arr = net._check_signal(signal)
    return np.ascontiguousarray(arr[None].astype(net.dtype))


def stream_loss_cxr(net: network.Network, image, beta: float, cfg: ObjectiveConfig,
                    eps) -> StreamLoss:
    """Image-only evidence bound for a single sample with injected noise."""
    x = _single_image_cf(net, image)
    mu, lv, _ = net.enc_forward("cxr", x)
    z = mu + np.exp(0.5 * lv) * np.asarray(eps, dtype=net.dtype)[None]
    xhat, _ = net.dec_forward("cxr", z)
    recon = float(bernoulli_ll(x, xhat)[0])
    kl = float(kl_standard_normal_arrays(mu, lv)[0])
    return StreamLoss(recon, 0.0, kl, cfg.lambda_cxr * recon - beta * kl)


def stream_loss_ecg(net: network.Network, signal, beta: float, cfg: ObjectiveConfig,
                    eps) -> StreamLoss:
    """Signal-only evidence bound for a single sample with injected noise."""
    x = _single_signal_cf(net, signal)
    mu, lv, _ = net.enc_forward("ecg", x)
    z = mu + np.exp(0.5 * lv) * np.asarray(eps, dtype=net.dtype)[None]
    ghat, _ = net.dec_forward("ecg", z)
    recon = float(gaussian_ll(x, ghat)[0])
    kl = float(kl_standard_normal_arrays(mu, lv)[0])
    return StreamLoss(0.0, recon, kl, cfg.lambda_ecg * recon - beta * kl)


def stream_loss_joint(net: network.Network, image, signal, beta: float,
                      cfg: ObjectiveConfig, eps) -> StreamLoss:
    """Joint bound: PoE posterior (with prior), one z into both decoders."""
    xi = _single_image_cf(net, image)
    xs = _single_signal_cf(net, signal)
    mu_x, lv_x, _ = net.enc_forward("cxr", xi)
    mu_g, lv_g, _ = net.enc_forward("ecg", xs)
    mu_f, lv_f, _ = fuse_arrays([mu_x, mu_g], [lv_x, lv_g], include_prior=True)
    z = mu_f + np.exp(0.5 * lv_f) * np.asarray(eps, dtype=net.dtype)[None]
    xhat, _ = net.dec_forward("cxr", z)
    ghat, _ = net.dec_forward("ecg", z)
    recon_x = float(bernoulli_ll(xi, xhat)[0])
    recon_g = float(gaussian_ll(xs, ghat)[0])
    kl = float(kl_standard_normal_arrays(mu_f, lv_f)[0])
    elbo = cfg.lambda_cxr * recon_x + cfg.lambda_ecg * recon_g - beta * kl
    return StreamLoss(recon_x, recon_g, kl, elbo)


def total_loss(net: network.Network, image, signal, beta: float, cfg: ObjectiveConfig,
               eps, mode: str = "tri") -> LossBreakdown:
    """Single-sample total objective; ``eps`` maps stream name to (D,) noise."""
    xi = _single_image_cf(net, image)
    xs = _single_signal_cf(net, signal)
    eps_b = {k: np.asarray(v, dtype=net.dtype)[None] for k, v in eps.items()}
    breakdown, _ = total_loss_and_grads(net, xi, xs, beta, cfg, eps_b, mode=mode,
                                        want_grads=False)
    return breakdown
