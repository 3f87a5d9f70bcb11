"""Training loops: tri-stream pre-training, frozen-encoder fine-tuning,
stratified cross-validation, and the modality-weight grid search.

Reproducibility contract: identical (config, seed, build) produces
bitwise-identical histories and checkpoints. Every random draw comes from
a child generator derived from the run seed and a fixed purpose tag, and
history rows recompute ``total`` as ``elbo_cxr + elbo_ecg + elbo_joint``
in that order so the additivity identity holds row by row.
"""

import csv
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import metrics, network, tensorio
from .datasets import require_both_modalities, require_labels, split_kfold, split_ratio
from .errors import ConfigError, DataError, NumericError
from .losses import (LossBreakdown, ObjectiveConfig, bce_grad_batch, bce_loss_batch,
                     beta_at, draw_noise, total_loss_and_grads)
from .network import ArchConfig, Network
from .optim import adam_step, init_optim
from .synth import stream_rng

# purpose tags for child RNG streams
_TAG_SPLIT = 1
_TAG_SHUFFLE = 2
_TAG_EPS = 3
_TAG_VAL = 4
_TAG_HEAD = 5
_TAG_DROPOUT = 6
_TAG_FOLD = 7

PRETRAIN_HISTORY_COLUMNS = ("epoch", "split") + LossBreakdown.FIELDS
FINETUNE_HISTORY_COLUMNS = ("epoch", "split", "bce", "accuracy")


@dataclass(frozen=True)
class RunConfig:
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    stream_mode: str = "tri"  # "tri" or "joint-only"
    modality: str = "joint"   # fine-tuning feature mode
    lr: float = 0.001
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.stream_mode not in ("tri", "joint-only"):
            raise ConfigError(f"unknown stream_mode {self.stream_mode!r}")
        if self.modality not in network.MODALITY_MODES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class FoldResult:
    fold: int
    auroc: float
    accuracy: float
    losses: tuple  # per-epoch training BCE


@dataclass
class PretrainResult:
    final_params: dict
    best_params: dict
    best_val_total: float
    history: list  # dict rows with PRETRAIN_HISTORY_COLUMNS keys
    objective: ObjectiveConfig  # anneal schedule resolved


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_history_csv(path, columns, rows) -> None:
    """History rows as CSV; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _stack_batches(samples, dtype=np.float32):
    images = np.ascontiguousarray(
        np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)).astype(dtype)
    signals = np.ascontiguousarray(np.stack([s.signal for s in samples])).astype(dtype)
    return images, signals


def _epoch_row(epoch, split, sums, n):
    vals = {f: sums[f] / n for f in LossBreakdown.FIELDS if f != "total"}
    row = {"epoch": epoch, "split": split}
    row.update(vals)
    row["total"] = vals["elbo_cxr"] + vals["elbo_ecg"] + vals["elbo_joint"]
    return row


def _eval_breakdown(net, images, signals, beta, obj, mode, seed, tag, epoch, batch_size):
    """Mean LossBreakdown over a held-out set with per-epoch seeded noise."""
    rng = stream_rng(seed, tag, epoch)
    n = images.shape[0]
    sums = {f: 0.0 for f in LossBreakdown.FIELDS}
    for lo in range(0, n, batch_size):
        img = images[lo:lo + batch_size]
        sig = signals[lo:lo + batch_size]
        eps = draw_noise(rng, img.shape[0], net.arch.latent_dim, mode, net.dtype)
        bd, _ = total_loss_and_grads(net, img, sig, beta, obj, eps, mode=mode,
                                     want_grads=False)
        for f in LossBreakdown.FIELDS:
            sums[f] += getattr(bd, f) * img.shape[0]
    return sums, n


def resolve_anneal(obj: ObjectiveConfig, planned_steps: int) -> ObjectiveConfig:
    """Fill in the default warm-up length: 20% of planned optimizer steps."""
    if obj.anneal_steps is not None:
        return obj
    return replace(obj, anneal_steps=max(1, round(0.2 * planned_steps)))


def pretrain(samples, arch: ArchConfig, obj: ObjectiveConfig, run: RunConfig,
             out_dir=None) -> PretrainResult:
    """Tri-stream (or joint-only) pre-training with a 90:10 split.

    Minimizes the negated total bound with Adam; beta advances once per
    optimizer step. Emits final and best-validation parameter sets, and
    writes history plus checkpoints under ``out_dir`` when given.
    """
    if not samples:
        raise DataError("empty dataset")
    require_both_modalities(samples)
    mode = run.stream_mode

    if len(samples) == 1:
        # degenerate single-sample runs validate on the training sample
        train_samples, val_samples = list(samples), list(samples)
    else:
        train_samples, val_samples = split_ratio(samples, run.val_fraction,
                                                 seed=run.seed + _TAG_SPLIT * 1000003)
    n_train = len(train_samples)
    steps_per_epoch = (n_train + run.batch_size - 1) // run.batch_size
    obj = resolve_anneal(obj, run.epochs * steps_per_epoch)

    train_images, train_signals = _stack_batches(train_samples)
    val_images, val_signals = _stack_batches(val_samples)

    net = Network.initialized(arch, run.seed)
    state = init_optim(net.params, lr=run.lr)
    eps_rng = stream_rng(run.seed, _TAG_EPS)

    history = []
    best_val_total = -np.inf
    best_params = {k: v.copy() for k, v in net.params.items()}
    step = 0

    for epoch in range(1, run.epochs + 1):
        order = stream_rng(run.seed, _TAG_SHUFFLE, epoch).permutation(n_train)
        sums = {f: 0.0 for f in LossBreakdown.FIELDS}
        for lo in range(0, n_train, run.batch_size):
            idx = order[lo:lo + run.batch_size]
            img = train_images[idx]
            sig = train_signals[idx]
            beta = beta_at(step, obj)
            eps = draw_noise(eps_rng, len(idx), arch.latent_dim, mode, net.dtype)
            bd, grads = total_loss_and_grads(net, img, sig, beta, obj, eps, mode=mode)
            if not np.isfinite(bd.total):
                ids = [train_samples[i].id for i in idx.tolist()]
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}; batch ids {ids}")
            adam_step(net.params, grads, state)
            step += 1
            for f in LossBreakdown.FIELDS:
                sums[f] += getattr(bd, f) * len(idx)
        history.append(_epoch_row(epoch, "train", sums, n_train))

        # validation always scores at full beta so epochs compare on the
        # same objective regardless of where the warm-up stands
        vsums, vn = _eval_breakdown(net, val_images, val_signals, obj.max_beta, obj,
                                    mode, run.seed, _TAG_VAL, epoch, run.batch_size)
        vrow = _epoch_row(epoch, "val", vsums, vn)
        history.append(vrow)
        if vrow["total"] > best_val_total:
            best_val_total = vrow["total"]
            best_params = {k: v.copy() for k, v in net.params.items()}
        _log(f"[pretrain] epoch {epoch}/{run.epochs} "
             f"train_total={history[-2]['total']:.4f} val_total={vrow['total']:.4f} "
             f"beta={beta_at(step, obj):.3f}")

    result = PretrainResult(final_params=net.params, best_params=best_params,
                            best_val_total=best_val_total, history=history,
                            objective=obj)
    if out_dir is not None:
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv", PRETRAIN_HISTORY_COLUMNS, history)
        tensorio.write_checkpoint(out / "checkpoint_final.cvxg", result.final_params,
                                  arch, run.seed)
        tensorio.write_checkpoint(out / "checkpoint_best.cvxg", result.best_params,
                                  arch, run.seed)
    return result


def _train_head(arch: ArchConfig, base_params, features, labels, run: RunConfig,
                seed: int):
    """Adam/BCE training of the two FC head layers on frozen features."""
    head = network.init_head_params(arch, seed)
    params = dict(base_params)
    params.update(head)
    net = Network(arch, params, validate=False)
    state = init_optim(head, lr=run.lr)
    drop_rng = stream_rng(seed, _TAG_DROPOUT)
    n = len(labels)
    labels_f = labels.astype(np.float64)
    history = []
    for epoch in range(1, run.epochs + 1):
        order = stream_rng(seed, _TAG_SHUFFLE, epoch).permutation(n)
        bce_sum = 0.0
        correct = 0.0
        for lo in range(0, n, run.batch_size):
            idx = order[lo:lo + run.batch_size]
            feats = features[idx]
            y = labels_f[idx]
            mask = network.make_dropout_mask(
                drop_rng, (len(idx), arch.head_hidden), arch.head_dropout,
                dtype=net.dtype)
            logits, cache = net.head_forward(feats, mask)
            losses_b = bce_loss_batch(logits, y)
            if not np.all(np.isfinite(losses_b)):
                raise NumericError(f"non-finite BCE at epoch {epoch}")
            grads = {k: np.zeros_like(v) for k, v in head.items()}
            d_logits = (bce_grad_batch(logits, y) / len(idx)).astype(net.dtype)
            net.head_backward(cache, d_logits, grads)
            adam_step(head, grads, state)
            # head entries are shared with params by reference; keep in sync
            bce_sum += float(losses_b.sum())
            correct += float(((logits > 0).astype(int) == labels[idx]).sum())
        history.append({"epoch": epoch, "split": "train",
                        "bce": bce_sum / n, "accuracy": correct / n})
    return head, history, net


def finetune(net: Network, samples, run: RunConfig):
    """Frozen-encoder fine-tuning; returns ``(head_params, history)``.

    Only ``head.*`` tensors are created and updated; every other tensor is
    verified bitwise-unchanged afterwards.
    """
    require_labels(samples)
    frozen_before = {k: v.copy() for k, v in net.params.items()
                     if not k.startswith("head.")}

    features = net.extract_features(samples, run.modality)
    labels = np.array([s.label for s in samples], dtype=int)
    head, history, _ = _train_head(net.arch, net.params, features, labels, run,
                                   seed=run.seed + _TAG_HEAD * 1000003)

    for k, v in frozen_before.items():
        if v.tobytes() != net.params[k].tobytes():
            raise NumericError(f"frozen tensor {k!r} changed during fine-tuning")
    return head, history


def cross_validate(net: Network, samples, run: RunConfig, k: int = 10):
    """Stratified k-fold protocol.

    Each fold is held out untouched; the remaining data is split 80:20
    stratified, the head trains on the 80% slice, and the 20% validation
    slice is scored. Features come from the frozen encoders once.
    """
    if k < 2:
        raise DataError("k must be >= 2")
    require_labels(samples)
    features = net.extract_features(samples, run.modality)
    labels = np.array([s.label for s in samples], dtype=int)
    index_of = {id(s): i for i, s in enumerate(samples)}
    folds = split_kfold(samples, k, seed=run.seed + _TAG_FOLD * 1000003)

    results = []
    for fold_no, fold in enumerate(folds):
        held = {id(s) for s in fold}
        rest = [s for s in samples if id(s) not in held]
        fold_seed = run.seed + _TAG_FOLD * 1000003 + 7919 * (fold_no + 1)
        tr, va = split_ratio(rest, 0.2, seed=fold_seed, stratify=True)
        tr_idx = np.array([index_of[id(s)] for s in tr], dtype=int)
        va_idx = np.array([index_of[id(s)] for s in va], dtype=int)
        head, hist, head_net = _train_head(net.arch, net.params, features[tr_idx],
                                           labels[tr_idx], run, seed=fold_seed)
        val_logits = head_net.classify(features[va_idx])
        results.append(FoldResult(
            fold=fold_no,
            auroc=metrics.auroc(val_logits, labels[va_idx]),
            accuracy=metrics.accuracy(val_logits, labels[va_idx].astype(int)),
            losses=tuple(r["bce"] for r in hist),
        ))
        _log(f"[cv] fold {fold_no}: auroc={results[-1].auroc:.4f} "
             f"accuracy={results[-1].accuracy:.4f}")

    aurocs = np.array([r.auroc for r in results])
    accs = np.array([r.accuracy for r in results])
    summary = {
        "auroc_mean": float(aurocs.mean()),
        "auroc_std": float(aurocs.std(ddof=1)) if k > 1 else 0.0,
        "accuracy_mean": float(accs.mean()),
        "accuracy_std": float(accs.std(ddof=1)) if k > 1 else 0.0,
    }
    return results, summary


def grid_search_lambda(samples, grid, arch: ArchConfig, obj: ObjectiveConfig,
                       run: RunConfig):
    """Short pre-training per grid cell; picks the best validation total.

    ``grid`` is an iterable of (lambda_cxr, lambda_ecg) pairs. Ties break
    toward the lexicographically smallest pair. Returns
    ``(best_pair, table)`` with one (lambda_cxr, lambda_ecg, val_total)
    row per cell.
    """
    cells = sorted({(float(a), float(b)) for a, b in grid})
    if not cells:
        raise ConfigError("empty grid")
    table = []
    best_pair = None
    best_val = -np.inf
    for lx, lg in cells:
        cell_obj = replace(obj, lambda_cxr=lx, lambda_ecg=lg)
        res = pretrain(samples, arch, cell_obj, run)
        val_total = [r for r in res.history if r["split"] == "val"][-1]["total"]
        table.append((lx, lg, val_total))
        _log(f"[grid] lambda=({lx}, {lg}) val_total={val_total:.4f}")
        if val_total > best_val:
            best_val = val_total
            best_pair = (lx, lg)
    return best_pair, table
