"""Command-line surface.

Subcommands: synth-data, pretrain, finetune, evaluate, attribute, bench.
Exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 numeric failure. Errors
print one machine-parseable line ``error:<category>: <message>`` on
stderr. Commands that produce run artifacts write them under a fresh
``<out>/<timestamp>-seed<N>`` directory together with the fully resolved
configuration; ``synth-data`` writes the dataset directory itself so
equal seeds give byte-identical outputs.
"""

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attribution, bench, kernels, metrics, tensorio, train
from .config import Resolved, parse_config_file
from .datasets import load_dataset, save_dataset
from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError
from .network import HEAD_NAMES, Network
from .synth import synth_generate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_NUMERIC = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error:usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _run_dir(out, seed: int) -> Path:
    base = Path(out)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = base / f"{stamp}-seed{seed}"
    n = 1
    while candidate.exists():
        n += 1
        candidate = base / f"{stamp}-seed{seed}-{n}"
    candidate.mkdir(parents=True)
    return candidate


def _resolved_from(args) -> Resolved:
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    res = Resolved(values)
    for flag, key in (
        ("seed", "run.seed"),
        ("epochs", "run.epochs"),
        ("batch_size", "run.batch_size"),
        ("lr", "run.lr"),
        ("streams", "run.stream_mode"),
        ("modality", "run.modality"),
        ("folds", "run.folds"),
        ("arch", "arch.preset"),
        ("n", "synth.n"),
    ):
        if hasattr(args, flag):
            res.override(key, getattr(args, flag))
    if getattr(args, "seed", None) is not None:
        res.override("synth.seed", args.seed)
    return res


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else str(v) for v in row])


def _load_network(checkpoint_path) -> tuple:
    params, arch, seed = tensorio.read_checkpoint(checkpoint_path)
    return Network(arch, params), arch, seed


def cmd_synth_data(args) -> int:
    res = _resolved_from(args)
    arch = res.arch()
    cfg = res.synth(arch)
    samples = synth_generate(cfg)
    out = Path(args.out)
    save_dataset(out, samples)
    (out / "resolved.cfg").write_text(res.dump(arch), encoding="utf-8")
    print(out)
    return EXIT_OK


def _frechet_report(net, samples):
    """Fréchet distance in model feature space: real vs reconstructed."""
    feats_real = net.extract_features(samples, "joint")
    recon = []
    for lo in range(0, len(samples), 128):
        z = feats_real[lo:lo + 128].astype(net.dtype)
        imgs, _ = net.dec_forward("cxr", z)
        sigs, _ = net.dec_forward("ecg", z)
        for i in range(z.shape[0]):
            recon.append((net.images_from_cf(imgs[i:i + 1])[0], sigs[i]))

    class _R:  # minimal sample stand-in for extract_features
        __slots__ = ("id", "image", "signal")

        def __init__(self, i, image, signal):
            self.id = f"recon{i}"
            self.image = image
            self.signal = signal

    recon_samples = [_R(i, im, sg) for i, (im, sg) in enumerate(recon)]
    feats_recon = net.extract_features(recon_samples, "joint")
    fd = metrics.frechet_distance(metrics.gaussian_stats(feats_real),
                                  metrics.gaussian_stats(feats_recon))
    return fd, len(samples)


def cmd_pretrain(args) -> int:
    res = _resolved_from(args)
    arch = res.arch()
    obj = res.objective()
    run = res.run()
    samples = load_dataset(args.data)
    rundir = _run_dir(args.out, run.seed)
    (rundir / "resolved.cfg").write_text(res.dump(arch), encoding="utf-8")

    if args.grid_search:
        grid_vals = res.get("obj.grid", (0.1, 0.5, 1.0, 2.0, 10.0))
        grid = [(a, b) for a in grid_vals for b in grid_vals]
        grid_epochs = res.get("run.grid_epochs", max(1, run.epochs // 5))
        grid_run = replace(run, epochs=grid_epochs)
        best, table = train.grid_search_lambda(samples, grid, arch, obj, grid_run)
        _write_csv(rundir / "grid_table.csv",
                   ["lambda_cxr", "lambda_ecg", "val_total"], table)
        obj = replace(obj, lambda_cxr=best[0], lambda_ecg=best[1])
        print(f"[grid] selected lambda_cxr={best[0]} lambda_ecg={best[1]}",
              file=sys.stderr)

    result = train.pretrain(samples, arch, obj, run, out_dir=rundir)
    net = Network(arch, result.final_params, validate=False)
    if len(samples) >= 2:
        fd, n = _frechet_report(net, samples)
        _write_csv(rundir / "frechet_report.csv", ["metric", "value", "n"],
                   [("frechet_joint_feature_distance", float(fd), n)])
    print(rundir)
    return EXIT_OK


def cmd_finetune(args) -> int:
    res = _resolved_from(args)
    net, arch, _ = _load_network(args.checkpoint)
    run = res.run(batch_size=32, epochs=50)
    samples = load_dataset(args.data)
    rundir = _run_dir(args.out, run.seed)
    (rundir / "resolved.cfg").write_text(res.dump(arch), encoding="utf-8")
    head, history = train.finetune(net, samples, run)
    train.write_history_csv(rundir / "history.csv", train.FINETUNE_HISTORY_COLUMNS,
                            history)
    tensorio.write_checkpoint(rundir / "head.cvxg", head, arch, run.seed)
    print(rundir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    res = _resolved_from(args)
    net, arch, _ = _load_network(args.checkpoint)
    run = res.run(batch_size=32, epochs=50)
    folds = res.get("run.folds", 10)
    samples = load_dataset(args.data)
    rundir = _run_dir(args.out, run.seed)
    (rundir / "resolved.cfg").write_text(res.dump(arch), encoding="utf-8")
    results, summary = train.cross_validate(net, samples, run, k=folds)
    _write_csv(rundir / "folds.csv", ["fold", "auroc", "accuracy"],
               [(r.fold, r.auroc, r.accuracy) for r in results])
    _write_csv(rundir / "summary.csv", ["metric", "mean", "std"],
               [("auroc", summary["auroc_mean"], summary["auroc_std"]),
                ("accuracy", summary["accuracy_mean"], summary["accuracy_std"])])
    print(f"AUROC {summary['auroc_mean']:.4f} ± {summary['auroc_std']:.4f} | "
          f"accuracy {summary['accuracy_mean']:.4f} ± {summary['accuracy_std']:.4f}")
    print(rundir)
    return EXIT_OK


def cmd_attribute(args) -> int:
    res = _resolved_from(args)
    net, arch, _ = _load_network(args.checkpoint)
    head_params, head_arch, _ = tensorio.read_checkpoint(args.head)
    if head_arch != arch:
        raise FormatError("head checkpoint architecture does not match model")
    net = net.with_head({k: head_params[k] for k in HEAD_NAMES if k in head_params})
    samples = load_dataset(args.data)
    wanted = [s for s in samples if s.id == args.sample]
    if not wanted:
        raise DataError(f"sample id {args.sample!r} not found in {args.data}")
    run = res.run()
    mode = run.modality
    rundir = _run_dir(args.out, run.seed)
    (rundir / "resolved.cfg").write_text(res.dump(arch), encoding="utf-8")

    amap = attribution.integrated_gradients(net, wanted[0], mode, steps=args.steps)
    if amap.image is not None:
        tensorio.write_tensor(rundir / "attr_image.tnsr", amap.image)
        attribution.write_pgm(rundir / "attr_image.pgm", amap.image[:, :, 0])
    if amap.signal is not None:
        tensorio.write_tensor(rundir / "attr_signal.tnsr", amap.signal)
        _write_csv(rundir / "attr_signal.csv", ["index", "attribution"],
                   [(i, float(v)) for i, v in enumerate(amap.signal[0])])
    (rundir / "completeness.txt").write_text(
        f"steps = {amap.steps}\n"
        f"logit = {amap.logit!r}\n"
        f"baseline_logit = {amap.baseline_logit!r}\n"
        f"residual = {amap.completeness_residual!r}\n", encoding="utf-8")
    print(rundir)
    return EXIT_OK


def cmd_bench(args) -> int:
    backends = None if args.backend == "all" else [args.backend]
    rows = bench.run_bench(size=args.size, repeats=args.repeats, backends=backends)
    print(bench.format_table(rows))
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_csv(outdir / "bench.csv", ["kernel", "backend", "ms_per_call", "gmacs"],
                   rows)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="tristream",
                     description="Paired image/signal VAE: tri-stream pre-training, "
                                 "frozen-encoder fine-tuning, evaluation, attribution.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="run seed (overrides config)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--arch", choices=("desk", "paper"),
                       help="architecture preset (desk: 64x64/L4096/D16, "
                            "paper: 224x224/L60000/D64)")

    p = sub.add_parser("synth-data", help="generate the synthetic paired benchmark")
    common(p)
    p.add_argument("--n", type=int, help="number of samples")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("pretrain", help="tri-stream pre-training")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--streams", choices=("tri", "joint-only"))
    p.add_argument("--grid-search", action="store_true",
                   help="grid-search modality weights before the final run")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="frozen-encoder head fine-tuning")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modality", choices=("cxr", "ecg", "joint"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="stratified cross-validated metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modality", choices=("cxr", "ecg", "joint"))
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attribute", help="integrated-gradients attribution")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--head", required=True, help="head checkpoint from finetune")
    p.add_argument("--data", required=True)
    p.add_argument("--sample", required=True, help="sample id to attribute")
    p.add_argument("--modality", choices=("cxr", "ecg", "joint"))
    p.add_argument("--steps", type=int, default=64)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("bench", help="kernel backend benchmark")
    p.add_argument("--backend", choices=("all",) + tuple(kernels.available_backends()),
                   default="all")
    p.add_argument("--size", choices=("desk", "small"), default="desk")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", help="optional CSV output directory")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ShapeError) as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error:numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
