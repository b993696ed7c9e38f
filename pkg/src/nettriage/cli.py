"""Command-line pipeline: train the parent, run the compression grid,
render tables and activation maps.

Exit codes: 0 success, 1 validation error, 2 missing/unusable artifact,
3 data error.
"""

import argparse
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, kernels
from .data import (Preprocessor, load_mnist_idx, preprocess, split_train_val,
                   synth_shapes)
from .errors import (ConfigValidationError, ConsistencyError, CorruptionError,
                     DataNotFoundError, FormatError, IncompleteResultsError,
                     MissingArtifactError, NetTriageError, SchemaError,
                     TruncationError, VersionError)
from .metrics import convergence_epoch
from .model import build, mini_vgg_spec
from .optim import PlateauScheduler, SGDMomentum
from .report import (BaselineRow, ResultsTable, canonical_json,
                     dump_activations, emit_results)
from .triage import (INIT_SCHEMES, TRAIN_SCHEMES, SuiteSettings, TriageConfig,
                     evaluate_accuracy, result_from_dict, result_to_dict,
                     run_cell, run_triage_suite, train_network)

BATCH_SIZE = 64
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class RunConfig:
    """Fully resolved invocation: one subcommand plus every knob."""

    command: str
    dataset: str = "synth"
    data_dir: str = "data/mnist"
    out_dir: str = "runs"
    seed: int = 0
    epochs: int = 15
    lr: float = 0.001
    lr_min: float = 0.00001
    lr_decay: float = 0.5
    weight_decay: float = 0.001
    momentum: float = 0.9
    patience: int = 1
    cooldown: int = 3
    comp_epochs: int = 25
    stn_epochs: int = 12
    blocks: tuple = ()
    init: tuple = ()
    train: tuple = ()
    jobs: int = 1
    image_index: int = 0
    filters: int = 10

    def validate(self):
        def check(cond, fld, msg):
            if not cond:
                raise ConfigValidationError(fld, msg)

        check(self.dataset in ("mnist", "synth"), "dataset",
              "must be 'mnist' or 'synth'")
        check(self.seed >= 0, "seed", "must be >= 0")
        check(self.epochs >= 1, "epochs", "must be >= 1")
        check(self.lr > 0, "lr", "must be > 0")
        check(self.lr_min > 0, "lr-min", "must be > 0")
        check(self.lr_min <= self.lr, "lr-min", "must not exceed lr")
        check(0 < self.lr_decay < 1, "lr-decay", "must lie in (0,1)")
        check(self.weight_decay >= 0, "weight-decay", "must be >= 0")
        check(0 <= self.momentum < 1, "momentum", "must lie in [0,1)")
        check(self.patience >= 0, "patience", "must be >= 0")
        check(self.cooldown >= 0, "cooldown", "must be >= 0")
        check(self.comp_epochs >= 1, "comp-epochs", "must be >= 1")
        check(self.stn_epochs >= 1, "stn-epochs", "must be >= 1")
        check(self.jobs >= 1, "jobs", "must be >= 1")
        check(self.image_index >= 0, "image-index", "must be >= 0")
        check(self.filters >= 1, "filters", "must be >= 1")
        for b in self.blocks:
            check(b >= 0, "blocks", f"block index {b} must be >= 0")
        for s in self.init:
            check(s in INIT_SCHEMES, "init",
                  f"{s!r} not one of {INIT_SCHEMES}")
        for s in self.train:
            check(s in TRAIN_SCHEMES, "train",
                  f"{s!r} not one of {TRAIN_SCHEMES}")
        return self

    def suite_settings(self):
        return SuiteSettings(
            lr=self.lr, lr_min=self.lr_min, lr_decay=self.lr_decay,
            weight_decay=self.weight_decay, momentum=self.momentum,
            patience=self.patience, cooldown=self.cooldown,
            comp_epochs=self.comp_epochs, stn_epochs=self.stn_epochs,
            batch_size=BATCH_SIZE, seed=self.seed)


def load_datasets(cfg):
    """Deterministic (train, val, test, preprocessor, classes) for either
    dataset.  MNIST is normalized and zero-padded to 32x32; the synthetic
    shapes come pre-sized and get train-time horizontal flips."""
    if cfg.dataset == "mnist":
        d = Path(cfg.data_dir)
        wanted = [d / f for pair in MNIST_FILES.values() for f in pair]
        missing = [str(p) for p in wanted if not p.exists()]
        if missing:
            raise DataNotFoundError(
                "missing MNIST IDX files: " + ", ".join(missing)
                + "; put the four uncompressed IDX files there or pass "
                  "--data-dir")
        train = load_mnist_idx(d / MNIST_FILES["train"][0],
                               d / MNIST_FILES["train"][1], split="train")
        test = load_mnist_idx(d / MNIST_FILES["test"][0],
                              d / MNIST_FILES["test"][1], split="test")
        val_count = 5000
        pre = Preprocessor(pad_to=32, hflip_prob=0.0)
        classes = 10
    else:
        train = synth_shapes(4096, cfg.seed, split="train")
        test = synth_shapes(1024, cfg.seed, split="test")
        val_count = 512
        pre = Preprocessor(pad_to=None, hflip_prob=0.5)
        classes = 4
    train, val = split_train_val(train, val_count)
    pre.fit(train)
    return (preprocess(train, pre), preprocess(val, pre),
            preprocess(test, pre), pre, classes)


def write_manifest(cfg, out_dir):
    manifest = {
        "command": cfg.command,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "versions": {
            "nettriage": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "backend": kernels.backend_name(),
    }
    path = Path(out_dir) / f"manifest-{cfg.command}.json"
    path.write_text(canonical_json(manifest))
    return path


def argv_from_manifest(path):
    """Reconstruct the argv that reproduces a manifest's run."""
    manifest = json.loads(Path(path).read_text())
    c = manifest["config"]
    argv = [c["command"]]
    for field, flag in (
            ("dataset", "--dataset"), ("data_dir", "--data-dir"),
            ("out_dir", "--out-dir"), ("seed", "--seed"),
            ("epochs", "--epochs"), ("lr", "--lr"), ("lr_min", "--lr-min"),
            ("lr_decay", "--lr-decay"), ("weight_decay", "--weight-decay"),
            ("momentum", "--momentum"), ("patience", "--patience"),
            ("cooldown", "--cooldown"), ("comp_epochs", "--comp-epochs"),
            ("stn_epochs", "--stn-epochs"), ("jobs", "--jobs"),
            ("image_index", "--image-index"), ("filters", "--filters")):
        argv += [flag, str(c[field])]
    for field, flag in (("blocks", "--blocks"), ("init", "--init"),
                        ("train", "--train")):
        if c[field]:
            argv += [flag, ",".join(str(v) for v in c[field])]
    return argv


def _resolve_grid(cfg, spec):
    blocks = cfg.blocks or tuple(
        i for i, b in enumerate(spec.blocks) if b.conv_count >= 2)
    for b in blocks:
        if not 0 <= b < len(spec.blocks):
            raise ConfigValidationError(
                "blocks", f"block {b} outside [0,{len(spec.blocks)})")
    inits = cfg.init or INIT_SCHEMES
    trains = cfg.train or TRAIN_SCHEMES
    return tuple(blocks), tuple(inits), tuple(trains)


def _model_spec(classes):
    return mini_vgg_spec(input_shape=(32, 32, 1), num_classes=classes)


# -- subcommands -------------------------------------------------------------


def cmd_train_base(cfg):
    """Train the uncompressed parent, save checkpoint plus metrics."""
    train, val, test, pre, classes = load_datasets(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    net = build(_model_spec(classes), cfg.seed)
    opt = SGDMomentum(cfg.lr, rho=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(opt, factor=cfg.lr_decay, patience=cfg.patience,
                             cooldown=cfg.cooldown, min_lr=cfg.lr_min)

    def show(epoch, acc):
        print(f"epoch {epoch:2d}  val_acc {acc:.4f}  lr {opt.lr:.6f}",
              flush=True)

    start = time.perf_counter()
    series = train_network(net, cfg.epochs, train, val, opt, sched,
                           seed=cfg.seed, batch_size=BATCH_SIZE, pre=pre,
                           epoch_hook=show)
    wall = time.perf_counter() - start
    test_acc = evaluate_accuracy(net, test)

    checkpoint.save(net, out / "base.ckpt")
    metrics = {
        "dataset": cfg.dataset,
        "accuracy_series": series,
        "max_accuracy": max(series),
        "convergence_epoch": convergence_epoch(series),
        "param_count": net.param_count(),
        "wall_time": wall,
        "test_accuracy": test_acc,
    }
    (out / "base_metrics.json").write_text(canonical_json(metrics))
    write_manifest(cfg, out)
    print(f"baseline: max val_acc {max(series):.4f}  test_acc "
          f"{test_acc:.4f}  checkpoint {out / 'base.ckpt'}")
    return 0


def _require(path, what):
    if not Path(path).exists():
        raise MissingArtifactError(
            f"{what} not found at {path}; run the earlier pipeline stage "
            f"or pass --out-dir")
    return Path(path)


def _cell_paths(out_dir, config):
    cells = Path(out_dir) / "cells"
    return cells / f"{config.key}.json", cells / f"{config.key}.ckpt"


def _store_cell(out_dir, config, result, child):
    json_path, ckpt_path = _cell_paths(out_dir, config)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    if child is not None:
        checkpoint.save(child, ckpt_path)
        json_path.write_text(canonical_json(result_to_dict(result)))


def _load_cell(out_dir, config):
    json_path, _ = _cell_paths(out_dir, config)
    if not json_path.exists():
        return None
    return result_from_dict(json.loads(json_path.read_text()))


def _cell_job(payload):
    """Worker for --jobs > 1: self-contained run of one grid cell."""
    cfg = RunConfig(**payload["cfg"])
    config = TriageConfig(**payload["config"])
    train, val, test, pre, _ = load_datasets(cfg)
    parent = checkpoint.load(Path(cfg.out_dir) / "base.ckpt")
    result, child = run_cell(parent, config, cfg.suite_settings(), train, val,
                             pre=pre, test_ds=test)
    _store_cell(cfg.out_dir, config, result, child)
    return result_to_dict(result)


def _baseline_row(out_dir):
    path = _require(Path(out_dir) / "base_metrics.json", "baseline metrics")
    m = json.loads(path.read_text())
    return BaselineRow(
        accuracy_series=m["accuracy_series"],
        max_accuracy=m["max_accuracy"],
        convergence_epoch=m["convergence_epoch"],
        param_count=m["param_count"],
        wall_time=m["wall_time"],
        test_accuracy=m.get("test_accuracy"),
    )


def cmd_triage(cfg):
    """Run the block x init x train grid from the saved parent."""
    out = Path(cfg.out_dir)
    ckpt = _require(out / "base.ckpt", "baseline checkpoint")
    baseline = _baseline_row(out)
    parent = checkpoint.load(ckpt)
    blocks, inits, trains = _resolve_grid(cfg, parent.spec)
    settings = cfg.suite_settings()
    train, val, test, pre, classes = load_datasets(cfg)
    if parent.spec.num_classes != classes:
        raise ConfigValidationError(
            "dataset", f"checkpoint has {parent.spec.num_classes} classes "
                       f"but dataset {cfg.dataset} has {classes}")

    def hook(config, result, child):
        _store_cell(cfg.out_dir, config, result, child)
        print(f"cell {config.key}: max_acc {result.max_accuracy:.4f}  "
              f"conv_epoch {result.convergence_epoch}  "
              f"{result.wall_time:.1f}s", flush=True)

    if cfg.jobs > 1:
        results = _parallel_suite(cfg, parent, blocks, inits, trains, settings)
    else:
        results = run_triage_suite(
            parent, blocks, inits, trains, settings, train, val, pre=pre,
            test_ds=test, cell_hook=hook,
            resume_lookup=lambda c: _load_cell(cfg.out_dir, c))

    table = ResultsTable(required=[(b, i, t) for b in blocks for i in inits
                                   for t in trains])
    table.set_baseline(baseline)
    for r in results:
        table.add(r)
    csv_path, json_path = emit_results(table, out)
    write_manifest(cfg, out)
    print(f"wrote {csv_path} and {json_path} ({len(results)} cells)")
    return 0


def _parallel_suite(cfg, parent, blocks, inits, trains, settings):
    """Grid cells in worker processes; per-cell seeds make the outcome
    identical to a serial run."""
    configs = [TriageConfig(block_index=b, init=i, train=t,
                            comp_epochs=settings.comp_epochs,
                            stn_epochs=settings.stn_epochs,
                            seed=settings.seed)
               for b in blocks for i in inits for t in trains]
    results = {}
    fresh = []
    for config in configs:
        cached = _load_cell(cfg.out_dir, config)
        if cached is not None:
            results[config.key] = cached
        else:
            fresh.append(config)
    if fresh:
        payloads = [{"cfg": asdict(cfg), "config": {
            "block_index": c.block_index, "init": c.init, "train": c.train,
            "comp_epochs": c.comp_epochs, "stn_epochs": c.stn_epochs,
            "seed": c.seed}} for c in fresh]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for config, rd in zip(fresh, pool.map(_cell_job, payloads)):
                result = result_from_dict(rd)
                results[config.key] = result
                print(f"cell {config.key}: max_acc "
                      f"{result.max_accuracy:.4f}", flush=True)
    return [results[c.key] for c in configs]


def cmd_viz(cfg):
    """Activation maps for the baseline and each requested grid cell."""
    out = Path(cfg.out_dir)
    ckpt = _require(out / "base.ckpt", "baseline checkpoint")
    base = checkpoint.load(ckpt)
    blocks, inits, trains = _resolve_grid(cfg, base.spec)
    _, _, test, _, _ = load_datasets(cfg)
    if cfg.image_index >= len(test):
        raise ConfigValidationError(
            "image-index",
            f"{cfg.image_index} outside test set of {len(test)} images")
    image = test.images[cfg.image_index]

    viz = out / "viz"
    written = []
    for b in blocks:
        paths, warnings = dump_activations(base, image, b, cfg.filters,
                                           viz / f"base-b{b}")
        written += paths
        for w in warnings:
            print(f"warning: {w}", flush=True)
    for b in blocks:
        for i in inits:
            for t in trains:
                config = TriageConfig(block_index=b, init=i, train=t)
                _, ckpt_path = _cell_paths(cfg.out_dir, config)
                child = checkpoint.load(_require(
                    ckpt_path, f"cell checkpoint {config.key}"))
                paths, warnings = dump_activations(child, image, b,
                                                   cfg.filters,
                                                   viz / config.key)
                written += paths
                for w in warnings:
                    print(f"warning: {w}", flush=True)
    write_manifest(cfg, out)
    print(f"wrote {len(written)} activation maps under {viz}")
    return 0


def cmd_report(cfg):
    """Re-emit results files from stored per-cell artifacts."""
    out = Path(cfg.out_dir)
    baseline = _baseline_row(out)
    spec = _model_spec(10 if cfg.dataset == "mnist" else 4)
    blocks, inits, trains = _resolve_grid(cfg, spec)
    table = ResultsTable(required=[(b, i, t) for b in blocks for i in inits
                                   for t in trains])
    table.set_baseline(baseline)
    for b in blocks:
        for i in inits:
            for t in trains:
                config = TriageConfig(block_index=b, init=i, train=t)
                cached = _load_cell(cfg.out_dir, config)
                if cached is not None:
                    table.add(cached)
    csv_path, json_path = emit_results(table, out)
    write_manifest(cfg, out)
    print(f"wrote {csv_path} and {json_path}")
    return 0


# -- argument parsing --------------------------------------------------------


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v != "")


def _str_list(text):
    return tuple(v for v in text.split(",") if v != "")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nettriage",
        description="Block-compression criticality experiments for small "
                    "convolutional classifiers.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", choices=("mnist", "synth"),
                        default="synth")
    common.add_argument("--data-dir", default="data/mnist")
    common.add_argument("--out-dir", default="runs")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--epochs", type=int, default=15)
    common.add_argument("--lr", type=float, default=0.001)
    common.add_argument("--lr-min", type=float, default=0.00001)
    common.add_argument("--lr-decay", type=float, default=0.5)
    common.add_argument("--weight-decay", type=float, default=0.001)
    common.add_argument("--momentum", type=float, default=0.9)
    common.add_argument("--patience", type=int, default=1)
    common.add_argument("--cooldown", type=int, default=3)
    common.add_argument("--comp-epochs", type=int, default=25)
    common.add_argument("--stn-epochs", type=int, default=12)
    common.add_argument("--blocks", type=_int_list, default=())
    common.add_argument("--init", type=_str_list, default=())
    common.add_argument("--train", type=_str_list, default=())
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--image-index", type=int, default=0)
    common.add_argument("--filters", type=int, default=10)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-base", parents=[common],
                   help="train the uncompressed parent model")
    sub.add_parser("triage", parents=[common],
                   help="run the compression grid against a saved parent")
    sub.add_parser("viz", parents=[common],
                   help="dump post-ReLU activation maps as PGM images")
    sub.add_parser("report", parents=[common],
                   help="rebuild results files from stored cells")
    return parser


COMMANDS = {
    "train-base": cmd_train_base,
    "triage": cmd_triage,
    "viz": cmd_viz,
    "report": cmd_report,
}

_VALIDATION_ERRORS = (ConfigValidationError,)
_ARTIFACT_ERRORS = (MissingArtifactError, IncompleteResultsError,
                    CorruptionError, VersionError, SchemaError)
_DATA_ERRORS = (DataNotFoundError, FormatError, TruncationError,
                ConsistencyError)


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    try:
        cfg.validate()
        return COMMANDS[cfg.command](cfg)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except _ARTIFACT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NetTriageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
