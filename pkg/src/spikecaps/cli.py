"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 IO or runtime error.
Every command writes its resolved settings into ``--out-dir``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from . import config as rc
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DATASET_NAMES,
    NOISE_KINDS,
    Dataset,
    NoiseSpec,
    convert_affnist,
    dataset_stats,
    default_data_root,
    load_split,
    normalize,
    place_on_canvas,
)
from .errors import DimensionError, FormatError, ParameterError, StateError
from .evaluator import affnist_protocol, evaluate, noise_sweep
from .trainer import train

logger = logging.getLogger("spikecaps")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3

CHECKPOINT_NAME = "model.spkc"
TRAIN_LOG_NAME = "train_log.jsonl"
RESOLVED_NAME = "config.resolved.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on its own; raise instead so main() owns the exit path
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> list:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from exc


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _args_dict(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    if "data_root" in d and d["data_root"] is None:
        d["data_root"] = default_data_root()
    return d


def _subset(ds: Dataset, n) -> Dataset:
    return ds if n is None else ds.subset(n)


def _load(root, name: str, split: str, key: str) -> Dataset:
    if not root:
        raise rc.ConfigError(key, "no dataset root given (use --data-root or set SPIKECAPS_DATA_ROOT)")
    try:
        return load_split(root, name, split)
    except FileNotFoundError as exc:
        raise rc.ConfigError(key, str(exc)) from exc


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _run_config(args) -> rc.RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "out_dir": getattr(args, "out_dir", None),
        "threads": getattr(args, "threads", None),
        "data.root": getattr(args, "data_root", None),
        "train.epochs": getattr(args, "epochs", None),
        "arch.head": getattr(args, "head", None),
    }
    cfg = rc.load(args.config, overrides)
    rc.require_data_root(cfg)
    return cfg


def _prepared_mnist(cfg: rc.RunConfig):
    train_raw = _subset(_load(cfg.data.root, cfg.data.name, "train", "data.root"), cfg.data.train_subset)
    test_raw = _subset(_load(cfg.data.root, cfg.data.name, "test", "data.root"), cfg.data.test_subset)
    return train_raw, test_raw


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg.out_dir)
    cfg.write(out / RESOLVED_NAME)
    train_raw, test_raw = _prepared_mnist(cfg)
    mean, std = dataset_stats(train_raw)
    test_raw = cfg.noise.apply(test_raw, seed=cfg.derived_seed(1))
    with _threads(cfg.threads), open(out / TRAIN_LOG_NAME, "w") as log:
        result = train(cfg.model, normalize(train_raw, mean, std), cfg.train, normalize(test_raw, mean, std), log_file=log)
    meta = {"seed": cfg.seed, "dataset": cfg.data.name, "epochs_run": result.epochs_run}
    save_checkpoint(out / CHECKPOINT_NAME, cfg.model, result.params, {"mean": mean, "std": std}, meta)
    final = result.log[-1] if result.log else {}
    print(json.dumps({"checkpoint": str(out / CHECKPOINT_NAME), "epochs_run": result.epochs_run, "test_acc": final.get("test_acc")}))
    return EXIT_OK


def _checkpoint(args):
    try:
        cfg, params, header = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise OSError(f"cannot read checkpoint {args.checkpoint}: {exc}") from exc
    if args.head is not None and args.head != cfg.arch.head:
        raise UsageError(f"--head {args.head} does not match the checkpoint head {cfg.arch.head}")
    norm = header.get("normalization")
    if not norm:
        raise FormatError(f"{args.checkpoint}: checkpoint carries no input normalisation")
    return cfg, params, header, (norm["mean"], norm["std"])


def cmd_eval(args) -> int:
    out = _out_dir(args.out_dir)
    _write_json(out / f"eval_{args.dataset}_{args.split}.resolved.json", _args_dict(args))
    cfg, params, header, (mean, std) = _checkpoint(args)
    raw = _subset(_load(args.data_root or default_data_root(), args.dataset, args.split, "--data-root"), args.subset)
    spec = NoiseSpec(args.noise_kind, args.noise_intensity, args.noise_seed)
    seed = header.get("metadata", {}).get("seed")
    with _threads(args.threads):
        acc, cm = evaluate(cfg, params, normalize(spec.apply(raw, seed=seed), mean, std), args.batch_size)
    tag = f"{args.dataset}_{args.split}"
    report = {
        "accuracy": acc,
        "n_samples": cm.total,
        "head": cfg.arch.head,
        "seed": seed,
        "dataset": args.dataset,
        "split": args.split,
        "noise": dataclasses.asdict(spec),
    }
    _write_json(out / f"eval_{tag}.json", report)
    (out / f"confusion_{tag}.csv").write_text(cm.to_csv())
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    intensities = _float_list(args.intensities)
    if not intensities:
        raise UsageError("--intensities must list at least one value")
    out = _out_dir(args.out_dir)
    _write_json(out / f"sweep_{args.kind}.resolved.json", _args_dict(args))
    cfg, params, header, norm = _checkpoint(args)
    raw = _subset(_load(args.data_root or default_data_root(), args.dataset, args.split, "--data-root"), args.subset)
    seed = args.seed if args.seed is not None else header.get("metadata", {}).get("seed", 0)
    with _threads(args.threads):
        result = noise_sweep(cfg, params, raw, norm, args.kind, intensities, seed, args.batch_size)
    (out / f"sweep_{args.kind}.csv").write_text(result.to_csv())
    print(result.to_csv(), end="")
    return EXIT_OK


def cmd_affnist(args) -> int:
    cfg = _run_config(args)
    stops = _float_list(args.stops) if args.stops is not None else list(cfg.affnist.stop_accs)
    canvas = args.canvas if args.canvas is not None else cfg.affnist.canvas
    if not stops:
        raise UsageError("--stops must list at least one value")
    cfg.affnist = dataclasses.replace(cfg.affnist, stop_accs=stops, canvas=canvas)
    if args.affnist_root is not None:
        cfg.affnist = dataclasses.replace(cfg.affnist, test_root=args.affnist_root)
    cfg.arch = dataclasses.replace(cfg.arch, input_shape=(1, canvas, canvas))
    out = _out_dir(cfg.out_dir)
    cfg.write(out / RESOLVED_NAME)

    train_raw = _subset(_load(cfg.data.root, cfg.data.name, "train", "data.root"), cfg.data.train_subset)
    placed = place_on_canvas(train_raw, canvas, seed=cfg.derived_seed(2))
    test_root = cfg.affnist.test_root or cfg.data.root
    test_raw = _subset(_load(test_root, cfg.affnist.test_name, "test", "affnist.test_root"), cfg.affnist.test_subset)
    if test_raw.image_shape != cfg.arch.input_shape:
        raise rc.ConfigError("affnist.canvas", f"canvas {canvas} does not match test images {test_raw.image_shape}")
    mean, std = dataset_stats(placed)
    with _threads(cfg.threads), open(out / TRAIN_LOG_NAME, "w") as log:
        results = affnist_protocol(cfg.model, normalize(placed, mean, std), normalize(test_raw, mean, std), stops, cfg.train, log)
    rows = [{"target": r.target, "epochs_used": r.epochs_used, "affnist_acc": r.affnist_acc} for r in results]
    _write_json(out / "affnist_results.json", [r.to_dict() for r in results])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["target", "epochs_used", "affnist_acc"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "affnist_results.csv").write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_convert_affnist(args) -> int:
    out = _out_dir(args.out_dir)
    _write_json(out / "convert_affnist.resolved.json", _args_dict(args))
    if not Path(args.mat).exists():
        raise UsageError(f"--mat {args.mat} does not exist")
    ip, lp = convert_affnist(args.mat, out, split=args.split, transpose=args.transpose)
    print(json.dumps({"images": str(ip), "labels": str(lp)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spikecaps", description="Spiking capsule network: training, evaluation and robustness protocols.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_default=None):
        sp.add_argument("--out-dir", default=out_default, help="directory for every output file")
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
        sp.add_argument("--data-root", default=None, help="dataset root (default: $SPIKECAPS_DATA_ROOT)")

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("config")
    common(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--head", choices=("norm", "fc"))
    t.set_defaults(func=cmd_train)

    def checkpoint_args(sp):
        sp.add_argument("checkpoint")
        common(sp, out_default=".")
        sp.add_argument("--dataset", choices=DATASET_NAMES, default="mnist")
        sp.add_argument("--split", choices=("train", "test"), default="test")
        sp.add_argument("--subset", type=int, default=None, help="use only the first N samples")
        sp.add_argument("--head", choices=("norm", "fc"), default=None, help="assert the checkpoint head")
        sp.add_argument("--batch-size", type=int, default=100)

    e = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    checkpoint_args(e)
    e.add_argument("--noise-kind", choices=NOISE_KINDS, default="none")
    e.add_argument("--noise-intensity", type=float, default=0.0)
    e.add_argument("--noise-seed", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("noise-sweep", help="accuracy over a grid of noise intensities")
    checkpoint_args(n)
    n.add_argument("--kind", choices=("salt_pepper", "gaussian"), required=True)
    n.add_argument("--intensities", required=True, help="comma-separated, strictly increasing")
    n.add_argument("--seed", type=int, default=None, help="corruption seed (default: checkpoint seed)")
    n.set_defaults(func=cmd_noise_sweep)

    a = sub.add_parser("affnist", help="train on canvas-placed digits and test on affine-transformed digits")
    a.add_argument("config")
    common(a)
    a.add_argument("--seed", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--stops", default=None, help="training-accuracy stops (default 0.97,0.98,0.99)")
    a.add_argument("--canvas", type=int, default=None, help="canvas side in pixels (default 40)")
    a.add_argument("--affnist-root", default=None, help="root holding affnist/ (default: the data root)")
    a.set_defaults(func=cmd_affnist)

    c = sub.add_parser("convert-affnist", help="convert an affNIST .mat batch to IDX files")
    c.add_argument("--mat", required=True)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--split", choices=("train", "test"), default="test")
    c.add_argument("--transpose", action="store_true", help="swap image rows and columns")
    c.set_defaults(func=cmd_convert_affnist)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, rc.ConfigError, ParameterError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
