"""Paired-sample datasets: on-disk layout, manifests, splits, and pairing
of separate modality archives by subject and time.

A dataset directory holds one ``manifest.csv`` with header
``id,image_path,signal_path,label`` (paths relative to the directory,
empty fields meaning an absent modality or label) plus one TNSR file per
stored modality tensor.
"""

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import DataError, FormatError

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ["id", "image_path", "signal_path", "label"]


@dataclass
class PairedSample:
    """One subject's image and/or signal, with an optional binary label."""

    id: str
    image: np.ndarray | None = None
    signal: np.ndarray | None = None
    label: int | None = None

    def __post_init__(self):
        if self.image is None and self.signal is None:
            raise DataError(f"sample {self.id!r} has no modality")
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"sample {self.id!r} label must be 0 or 1")


def require_both_modalities(samples):
    missing = [s.id for s in samples if s.image is None or s.signal is None]
    if missing:
        raise DataError(f"samples missing a modality: {missing[:5]}"
                        + ("..." if len(missing) > 5 else ""))


def require_labels(samples):
    missing = [s.id for s in samples if s.label is None]
    if missing:
        raise DataError(f"samples missing labels: {missing[:5]}"
                        + ("..." if len(missing) > 5 else ""))
    labels = {s.label for s in samples}
    if len(labels) < 2:
        raise DataError("dataset contains a single class; need both labels")


def save_dataset(dirpath, samples) -> None:
    """Write samples and manifest; same inputs produce identical bytes."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for s in samples:
        img_rel = sig_rel = ""
        if s.image is not None:
            img_rel = f"{s.id}_img.tnsr"
            tensorio.write_tensor(root / img_rel, s.image)
        if s.signal is not None:
            sig_rel = f"{s.id}_sig.tnsr"
            tensorio.write_tensor(root / sig_rel, s.signal)
        writer.writerow([s.id, img_rel, sig_rel,
                         "" if s.label is None else str(s.label)])
    (root / MANIFEST_NAME).write_text(buf.getvalue(), encoding="utf-8")


def load_dataset(dirpath):
    root = Path(dirpath)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise FormatError(f"{manifest}: manifest not found")
    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise FormatError(f"{manifest}: bad manifest header {header}")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise FormatError(f"{manifest}: line {lineno}: expected 4 fields")
            sid, img_rel, sig_rel, label = row
            image = tensorio.read_tensor(root / img_rel) if img_rel else None
            signal = tensorio.read_tensor(root / sig_rel) if sig_rel else None
            samples.append(PairedSample(
                id=sid, image=image, signal=signal,
                label=int(label) if label != "" else None))
    return samples


def split_ratio(samples, second_fraction: float, seed: int, stratify: bool = False):
    """Disjoint, exhaustive, seed-deterministic two-way split.

    The second part gets ``round(n * second_fraction)`` samples, clamped
    so both parts stay nonempty (per class when stratifying).
    """
    n = len(samples)
    if n < 2:
        raise DataError("need at least 2 samples to split")
    if not 0.0 < second_fraction < 1.0:
        raise DataError("second_fraction must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    if not stratify:
        order = rng.permutation(n)
        n_second = min(max(int(round(n * second_fraction)), 1), n - 1)
        second = sorted(order[:n_second].tolist())
        first = sorted(order[n_second:].tolist())
        return [samples[i] for i in first], [samples[i] for i in second]

    require_labels(samples)
    first_idx, second_idx = [], []
    for label in (0, 1):
        idx = np.array([i for i, s in enumerate(samples) if s.label == label])
        if len(idx) < 2:
            raise DataError(f"class {label} has fewer than 2 samples")
        order = idx[rng.permutation(len(idx))]
        k = min(max(int(round(len(idx) * second_fraction)), 1), len(idx) - 1)
        second_idx.extend(order[:k].tolist())
        first_idx.extend(order[k:].tolist())
    return ([samples[i] for i in sorted(first_idx)],
            [samples[i] for i in sorted(second_idx)])


def split_kfold(samples, k: int, seed: int):
    """Stratified k folds; per-class counts differ by at most one."""
    if k < 2:
        raise DataError("k must be >= 2")
    require_labels(samples)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    folds = [[] for _ in range(k)]
    for label in (0, 1):
        idx = np.array([i for i, s in enumerate(samples) if s.label == label])
        if len(idx) < k:
            raise DataError(
                f"impossible stratification: class {label} has {len(idx)} "
                f"samples for {k} folds")
        order = idx[rng.permutation(len(idx))]
        for j, i in enumerate(order.tolist()):
            folds[j % k].append(i)
    return [[samples[i] for i in sorted(f)] for f in folds]


def _read_modality_manifest(path):
    rows = []
    p = Path(path)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "timestamp", "path"]:
            raise FormatError(f"{p}: bad manifest header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FormatError(f"{p}: line {lineno}: expected 3 fields")
            try:
                ts = float(row[1])
            except ValueError:
                raise FormatError(f"{p}: line {lineno}: bad timestamp {row[1]!r}") from None
            rows.append((row[0], ts, (p.parent / row[2])))
    return rows


def pair_by_key(image_manifest, signal_manifest, window: float):
    """Join two modality archives on subject id and closeness in time.

    Both manifests are CSVs with header ``subject_id,timestamp,path``.
    Records pair greedily by smallest |t_img - t_sig| within ``window``;
    each record is used at most once. Referenced TNSR files are loaded;
    unreadable files fail with the offending ids listed.
    """
    if window < 0:
        raise DataError("time window must be >= 0")
    imgs = _read_modality_manifest(image_manifest)
    sigs = _read_modality_manifest(signal_manifest)
    by_subject = {}
    for i, (sid, ts, path) in enumerate(imgs):
        by_subject.setdefault(sid, ([], []))[0].append((ts, i, path))
    for j, (sid, ts, path) in enumerate(sigs):
        if sid in by_subject:
            by_subject[sid][1].append((ts, j, path))

    pairs = []
    for sid in sorted(by_subject):
        cand_imgs, cand_sigs = by_subject[sid]
        options = []
        for (ti, i, pi) in cand_imgs:
            for (ts, j, ps) in cand_sigs:
                dt = abs(ti - ts)
                if dt <= window:
                    options.append((dt, ti, ts, i, j, pi, ps))
        options.sort(key=lambda o: (o[0], o[1], o[2], o[3], o[4]))
        used_i, used_j = set(), set()
        k = 0
        for (dt, ti, ts, i, j, pi, ps) in options:
            if i in used_i or j in used_j:
                continue
            used_i.add(i)
            used_j.add(j)
            pairs.append((sid, k, pi, ps))
            k += 1

    bad = []
    out = []
    for sid, k, pi, ps in pairs:
        try:
            image = tensorio.read_tensor(pi)
            signal = tensorio.read_tensor(ps)
        except (FormatError, OSError):
            bad.append(f"{sid}:{k}")
            continue
        out.append(PairedSample(id=f"{sid}:{k}", image=image, signal=signal))
    if bad:
        raise DataError(f"unreadable tensors for pairs: {bad}")
    return out
