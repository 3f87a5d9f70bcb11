"""Evaluation metrics: AUROC, accuracy, Gaussian feature statistics,
Fréchet distance, and Welch's t-test."""

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import DataError, NumericError, ShapeError


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative.

    Tie-aware rank statistic (Mann-Whitney U normalization): tied pairs
    count one half, which makes the value agree exactly with brute-force
    enumeration over all positive-negative pairs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be equal-length vectors")
    pos = labels == 1
    neg = labels == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos + n_neg != len(labels):
        raise DataError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs both classes present")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1

    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auroc_bruteforce(scores, labels) -> float:
    """O(n^2) pairwise oracle for :func:`auroc`; test/reference path."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("AUROC needs both classes present")
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def accuracy(logits, labels, threshold: float = 0.0) -> float:
    """Fraction of samples with (logit > threshold) matching the label."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape != labels.shape or logits.ndim != 1:
        raise ShapeError("logits and labels must be equal-length vectors")
    if len(logits) == 0:
        raise DataError("accuracy of an empty set is undefined")
    return float(np.mean((logits > threshold).astype(int) == labels))


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean and unbiased covariance of a feature cloud."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ShapeError(f"mean {mean.shape} and cov {cov.shape} inconsistent")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise NumericError("covariance not symmetric within 1e-10")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.mean.size


def gaussian_stats(features) -> GaussianStats:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError("features must be (n, d)")
    if feats.shape[0] < 2:
        raise DataError("need at least 2 feature vectors")
    mean = feats.mean(axis=0)
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    return GaussianStats(mean, cov)


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^(1/2)).

    The matrix square root comes from an eigendecomposition of the
    symmetrized product sqrt(Ca) Cb sqrt(Ca), with tiny negative
    eigenvalues clamped to zero.
    """
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    va, ua = np.linalg.eigh(a.cov)
    if va.min(initial=0.0) < -1e-8:
        raise NumericError(f"covariance has eigenvalue {va.min()} < -1e-8")
    sqrt_a = (ua * np.sqrt(np.clip(va, 0.0, None))) @ ua.T
    inner = sqrt_a @ b.cov @ sqrt_a
    vm = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sum(np.sqrt(np.clip(vm, 0.0, None)))
    fd = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt)
    if fd < -1e-6:
        raise NumericError(f"Fréchet distance evaluated to {fd} < -1e-6")
    return max(fd, 0.0)


def welch_t_test(a, b):
    """Welch's unequal-variance t statistic with a two-sided p-value.

    The p-value comes from the Student-t survival function expressed via
    the regularized incomplete beta function.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise DataError("both samples need at least 2 observations")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va <= 0.0 or vb <= 0.0:
        raise DataError("degenerate variance: constant sample")
    sa = va / len(a)
    sb = vb / len(b)
    se = np.sqrt(sa + sb)
    t = (a.mean() - b.mean()) / se
    df = (sa + sb) ** 2 / (sa ** 2 / (len(a) - 1) + sb ** 2 / (len(b) - 1))
    # two-sided p = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p
