"""Diagonal-Gaussian algebra: product-of-experts fusion, KL divergence
against the standard normal prior, and reparameterized sampling.

Encoders emit log-variance for numerical stability; variances are
recovered with exp() and floored at ``VAR_FLOOR`` before precision
weighting so a collapsed expert cannot divide by zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class DiagonalGaussian:
    """A diagonal Gaussian given by mean and log-variance vectors."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_var = np.asarray(self.log_var, dtype=np.float64)
        if mean.ndim != 1 or log_var.ndim != 1:
            raise ShapeError("mean and log_var must be vectors")
        if mean.shape != log_var.shape:
            raise ShapeError(
                f"mean length {mean.shape[0]} != log_var length {log_var.shape[0]}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise NumericError("DiagonalGaussian parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @classmethod
    def standard(cls, dim: int) -> "DiagonalGaussian":
        return cls(np.zeros(dim), np.zeros(dim))


def fuse_arrays(mus, log_vars, include_prior=True):
    """Product-of-experts fusion on stacked arrays.

    ``mus`` and ``log_vars`` are sequences of equally shaped arrays whose
    last axis is the latent dimension. Returns ``(mu, log_var, cache)``
    where cache feeds :func:`fuse_arrays_backward`.
    """
    if len(mus) == 0:
        raise ShapeError("fuse_arrays needs at least one expert; "
                         "the expert-free prior case is handled by poe_fuse")
    precisions = []
    floored = []
    for lv in log_vars:
        var = np.exp(lv)
        mask = var > VAR_FLOOR
        precisions.append(1.0 / np.maximum(var, VAR_FLOOR))
        floored.append(mask)
    total = precisions[0].copy()
    for t in precisions[1:]:
        total += t
    if include_prior:
        total += 1.0  # unit-Gaussian prior expert
    num = mus[0] * precisions[0]
    for mu, t in zip(mus[1:], precisions[1:]):
        num += mu * t
    fused_var = 1.0 / total
    fused_mu = num * fused_var
    cache = (mus, precisions, floored, total, fused_mu)
    return fused_mu, np.log(fused_var), cache


def fuse_arrays_backward(cache, d_mu, d_log_var):
    """Backward pass of :func:`fuse_arrays`.

    Given upstream gradients w.r.t. the fused mean and fused log-variance,
    returns per-expert gradient lists ``(d_mus, d_log_vars)``.
    """
    mus, precisions, floored, total, fused_mu = cache
    inv_total = 1.0 / total
    d_mus = []
    d_lvs = []
    for mu, prec, mask in zip(mus, precisions, floored):
        dm = d_mu * prec * inv_total
        # dL/dT_m, combining the mean route and the log-variance route
        dt = d_mu * (mu - fused_mu) * inv_total - d_log_var * inv_total
        dlv = -dt * prec * mask
        d_mus.append(dm)
        d_lvs.append(dlv)
    return d_mus, d_lvs


def poe_fuse(experts, include_prior: bool = True, dim: int | None = None) -> DiagonalGaussian:
    """Fuse diagonal-Gaussian experts by multiplying their densities.

    Precisions add; means combine precision-weighted. With
    ``include_prior`` (the default) the standard normal joins the product
    as an extra expert. ``dim`` is only needed for the expert-free case,
    where the prior passes through unchanged.
    """
    experts = list(experts)
    if not experts:
        if not include_prior:
            raise ShapeError("poe_fuse needs at least one expert or the prior")
        if dim is None:
            raise ShapeError("poe_fuse with no experts needs an explicit dim")
        return DiagonalGaussian.standard(dim)
    dim = experts[0].dim
    for i, e in enumerate(experts):
        if e.dim != dim:
            raise ShapeError(f"expert {i} has dimension {e.dim}, expected {dim}")
    mus = [e.mean for e in experts]
    lvs = [e.log_var for e in experts]
    mu, lv, _ = fuse_arrays(mus, lvs, include_prior=include_prior)
    return DiagonalGaussian(mu, lv)


def kl_standard_normal_arrays(mu, log_var):
    """Per-row KL(q || N(0, I)); sums the latent axis."""
    var = np.exp(log_var)
    return 0.5 * np.sum(var + mu * mu - 1.0 - log_var, axis=-1)


def kl_standard_normal(q: DiagonalGaussian) -> float:
    """KL divergence from q to the standard normal prior (always >= 0)."""
    return float(kl_standard_normal_arrays(q.mean, q.log_var))


def kl_standard_normal_grad_arrays(mu, log_var):
    """Gradients of the per-row KL w.r.t. mean and log-variance."""
    return mu, 0.5 * (np.exp(log_var) - 1.0)


def reparameterize_arrays(mu, log_var, epsilon):
    return mu + np.exp(0.5 * log_var) * epsilon


def reparameterize(q: DiagonalGaussian, epsilon) -> np.ndarray:
    """Differentiable sample z = mu + sigma * eps with injected noise."""
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != q.mean.shape:
        raise ShapeError(
            f"epsilon length {epsilon.shape} != latent dimension {q.mean.shape}"
        )
    return reparameterize_arrays(q.mean, q.log_var, epsilon)
