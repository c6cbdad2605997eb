"""Command line front end: train, eval, ablate, bench, verify.

Every experiment key can live in a flat key=value config file and be
overridden by the matching --key flag (flags win). Exit codes: 0 ok,
1 usage error, 2 data/format error, 3 numerical abort or failed
verification.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_cifar10, load_cifar100, make_synthetic_task
from .errors import ConfigError, FormatError, GumbelMaskError, NumericalError
from .masks import seed_stream
from .models import build_conv_family, build_mlp
from .training import (
    RunConfig,
    TrainingSession,
    evaluate_averaging,
    evaluate_threshold,
    network_pruning_rate,
    train,
)
from .verification import run_verification_suite

DATA_ENV = "GUMBELMASK_DATA_DIR"

ABLATION_HEADER = (
    "arch,augment,variant,rescale,weights,threshold_acc,averaging_acc,"
    "pruning_rate,best_epoch,epochs_run,seed"
)

ABLATION_VARIANTS = (
    ("none", "none", "kaiming"),
    ("wr", "smart", "kaiming"),
    ("sc", "none", "signed-constant"),
    ("wr+sc", "smart", "signed-constant"),
)


class UsageError(GumbelMaskError):
    """Bad command line or config file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise UsageError(f"expected on|off, got {value!r}")
    return value == "on"


def _float_or_auto(value: str):
    if value == "auto":
        return None
    return float(value)


# key -> (converter, choices, default). Flag names replace '_' with '-'.
_KEYS = {
    "dataset": (str, ("cifar10", "cifar100", "synthetic"), "synthetic"),
    "arch": (str, ("conv2", "conv4", "conv6", "mlp"), "mlp"),
    "mask_lr": (float, None, 50.0),
    "scale_lr": (float, None, 0.1),
    "momentum": (float, None, 0.9),
    "max_epochs": (int, None, 1000),
    "patience": (int, None, 100),
    "batch_size": (int, None, 128),
    "temperature": (float, None, 1.0),
    "rescale": (str, ("none", "smart", "dynamic"), "none"),
    "weights": (str, ("kaiming", "kaiming-scaled", "signed-constant"), "kaiming"),
    "augment": (_on_off, ("on", "off"), False),
    "eval": (str, ("threshold", "averaging"), "threshold"),
    "avg_samples": (int, None, 10),
    "seed": (int, None, 0),
    "out_dir": (str, None, "out"),
    "data_dir": (str, None, None),
    "dwr_reading": (str, ("keep", "prune"), "keep"),
    "mask_per": (str, ("batch", "epoch"), "batch"),
    "mask_last_layer": (_on_off, ("on", "off"), True),
    "mlp_hidden": (str, None, "16,16"),
    "sr_init": (_float_or_auto, None, None),
    "m_hat_init": (float, None, 0.0),
    "bias": (_on_off, ("on", "off"), False),
    "augment_pad": (int, None, 4),
    "synthetic_n": (int, None, 512),
    "synthetic_classes": (int, None, 2),
    "synthetic_dim": (int, None, 2),
    "synthetic_hw": (int, None, 16),
}


def _add_key_flags(parser: _Parser, keys=None):
    for key in keys or _KEYS:
        _, choices, _ = _KEYS[key]
        flag = "--" + key.replace("_", "-")
        if choices is not None:
            parser.add_argument(flag, dest=key, choices=choices, default=None)
        else:
            parser.add_argument(flag, dest=key, default=None)


def parse_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    opts = {}
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        opts[key] = value
    return opts


def _convert(key: str, value):
    conv, choices, _ = _KEYS[key]
    if isinstance(value, str):
        try:
            value = conv(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    if choices is not None and conv is str and value not in choices:
        raise UsageError(f"{key} must be one of {choices}; got {value!r}")
    return value


def _collect_opts(args) -> dict:
    """defaults <- config file <- explicit flags."""
    opts = {key: default for key, (_, _, default) in _KEYS.items()}
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            opts[key] = _convert(key, value)
    for key in _KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            opts[key] = _convert(key, raw)
    return opts


def _run_config(opts: dict) -> RunConfig:
    cfg = RunConfig(
        mask_lr=opts["mask_lr"],
        momentum=opts["momentum"],
        scale_lr=opts["scale_lr"],
        max_epochs=opts["max_epochs"],
        patience=opts["patience"],
        batch_size=opts["batch_size"],
        temperature=opts["temperature"],
        rescale=opts["rescale"],
        weights=opts["weights"],
        augment=opts["augment"],
        eval_mode=opts["eval"],
        avg_samples=opts["avg_samples"],
        seed=opts["seed"],
        mask_per=opts["mask_per"],
        mask_last_layer=opts["mask_last_layer"],
        dwr_reading=opts["dwr_reading"],
        sr_init=opts["sr_init"],
        m_hat_init=opts["m_hat_init"],
        augment_pad=opts["augment_pad"],
        bias=opts["bias"],
    )
    cfg.validate()
    return cfg


def _load_data(opts: dict):
    dataset = opts["dataset"]
    if dataset == "synthetic":
        if opts["arch"] == "mlp":
            return make_synthetic_task(
                opts["synthetic_n"],
                opts["seed"],
                n_classes=opts["synthetic_classes"],
                dim=opts["synthetic_dim"],
            )
        hw = opts["synthetic_hw"]
        return make_synthetic_task(
            opts["synthetic_n"],
            opts["seed"],
            n_classes=opts["synthetic_classes"],
            image_shape=(3, hw, hw),
        )
    root = opts["data_dir"] or os.environ.get(DATA_ENV)
    if not root:
        raise FormatError(
            f"dataset {dataset} needs a local directory; pass --data-dir or set {DATA_ENV}"
        )
    loader = load_cifar10 if dataset == "cifar10" else load_cifar100
    return loader(root)


def _n_classes(*datasets) -> int:
    return int(max(ds.labels.max() for ds in datasets)) + 1


def _build_net(opts: dict, cfg: RunConfig, train_ds, n_classes: int):
    if opts["arch"] == "mlp":
        hidden = [int(v) for v in str(opts["mlp_hidden"]).split(",") if v.strip()]
        sizes = [train_ds.images.shape[1], *hidden, n_classes]
        return build_mlp(sizes, opts["seed"], **cfg.network_options())
    return build_conv_family(
        opts["arch"],
        n_classes,
        opts["seed"],
        input_shape=train_ds.images.shape[1:],
        **cfg.network_options(),
    )


def _test_accuracy(net, test_ds, cfg: RunConfig, seed: int, mode: str | None = None):
    mode = mode or cfg.eval_mode
    if mode == "averaging":
        mean, samples = evaluate_averaging(
            net, test_ds, cfg.avg_samples, seed_stream(seed, "test-eval"),
            cfg.temperature, cfg.batch_size,
        )
        return mean, samples
    return evaluate_threshold(net, test_ds, cfg.batch_size), None


def _write_summary(out_dir: Path, payload: dict):
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train(opts: dict) -> int:
    cfg = _run_config(opts)
    train_ds, val_ds, test_ds = _load_data(opts)
    n_classes = _n_classes(train_ds, val_ds, test_ds)
    net = _build_net(opts, cfg, train_ds, n_classes)

    record = train(net, train_ds, val_ds, cfg)
    record.apply_best(net)
    test_acc, _ = _test_accuracy(net, test_ds, cfg, opts["seed"])

    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    record.to_csv(out_dir / "train_log.csv")
    save_checkpoint(out_dir / "checkpoint.bin", net, config=opts)
    _write_summary(
        out_dir,
        {
            "best_epoch": record.best_epoch,
            "best_val_acc": record.best_val_acc,
            "test_acc": test_acc,
            "final_pruning_rate": network_pruning_rate(net),
            "epochs_run": len(record.epochs),
            "config": opts,
        },
    )
    print(
        f"train: best val {record.best_val_acc:.4f} @ epoch {record.best_epoch}, "
        f"test {test_acc:.4f}, pruned {network_pruning_rate(net):.3f} -> {out_dir}"
    )
    return 0


def cmd_eval(opts: dict, checkpoint: str) -> int:
    net, saved = load_checkpoint(checkpoint)
    cfg = _run_config(opts)
    _, _, test_ds = _load_data(opts)
    acc, samples = _test_accuracy(net, test_ds, cfg, opts["seed"], opts["eval"])
    report = {
        "checkpoint": str(checkpoint),
        "mode": opts["eval"],
        "accuracy": acc,
        "pruning_rate": network_pruning_rate(net),
        "trained_config_seed": saved.get("seed"),
    }
    if samples is not None:
        report["per_sample_accuracy"] = samples
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _ablate_cell(cell_opts: dict) -> dict:
    cfg = _run_config(cell_opts)
    train_ds, val_ds, test_ds = _load_data(cell_opts)
    n_classes = _n_classes(train_ds, val_ds, test_ds)
    net = _build_net(cell_opts, cfg, train_ds, n_classes)
    record = train(net, train_ds, val_ds, cfg)
    record.apply_best(net)
    thr, _ = _test_accuracy(net, test_ds, cfg, cell_opts["seed"], "threshold")
    avg, _ = _test_accuracy(net, test_ds, cfg, cell_opts["seed"], "averaging")
    return {
        "arch": cell_opts["arch"],
        "augment": "on" if cell_opts["augment"] else "off",
        "variant": cell_opts["_variant"],
        "rescale": cell_opts["rescale"],
        "weights": cell_opts["weights"],
        "threshold_acc": thr,
        "averaging_acc": avg,
        "pruning_rate": network_pruning_rate(net),
        "best_epoch": record.best_epoch,
        "epochs_run": len(record.epochs),
        "seed": cell_opts["seed"],
    }


def cmd_ablate(opts: dict, archs: str | None, parallel: int) -> int:
    arch_list = [a.strip() for a in (archs or opts["arch"]).split(",") if a.strip()]
    cells = []
    for arch in arch_list:
        for augment in (False, True):
            for variant, rescale, weights in ABLATION_VARIANTS:
                cell = dict(opts)
                cell.update(
                    arch=arch, augment=augment, rescale=rescale,
                    weights=weights, _variant=variant,
                )
                cells.append(cell)

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_ablate_cell, cells))
    else:
        rows = [_ablate_cell(cell) for cell in cells]

    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [ABLATION_HEADER]
    for r in rows:
        lines.append(
            f"{r['arch']},{r['augment']},{r['variant']},{r['rescale']},{r['weights']},"
            f"{r['threshold_acc']:.6f},{r['averaging_acc']:.6f},{r['pruning_rate']:.6f},"
            f"{r['best_epoch']},{r['epochs_run']},{r['seed']}"
        )
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def run_benchmark(opts: dict, epochs: int) -> dict:
    """Interleaved per-epoch timing of the three rescale strategies.

    The three sessions share data and seeds and run round-robin so
    machine drift hits them equally; overhead is each strategy's mean
    epoch time minus the unrescaled baseline's.
    """
    if epochs < 10:
        raise UsageError(f"bench needs at least 10 epochs; got {epochs}")
    train_ds, val_ds, _ = _load_data(dict(opts, dataset="synthetic"))
    n_classes = int(train_ds.labels.max()) + 1
    modes = ("none", "smart", "dynamic")
    sessions, val_curves = {}, {m: [] for m in modes}
    for mode in modes:
        mode_opts = dict(opts, rescale=mode)
        cfg = _run_config(mode_opts)
        net = _build_net(mode_opts, cfg, train_ds, n_classes)
        sessions[mode] = TrainingSession(net, train_ds, cfg)

    for session in sessions.values():  # warm-up epoch, untimed
        session.run_epoch()

    times = {m: [] for m in modes}
    for r in range(epochs):
        # Rotate the order each round so cache/position effects average
        # out across strategies; evaluation happens after the timed block.
        order = modes[r % 3:] + modes[:r % 3]
        for mode in order:
            t0 = time.perf_counter()
            sessions[mode].run_epoch()
            times[mode].append(time.perf_counter() - t0)
        for mode in modes:
            val_curves[mode].append(
                evaluate_threshold(sessions[mode].net, val_ds, opts["batch_size"])
            )

    means = {m: statistics.mean(times[m]) for m in modes}
    stds = {m: statistics.stdev(times[m]) for m in modes}
    overhead = {m: means[m] - means["none"] for m in ("smart", "dynamic")}
    ratio = overhead["smart"] / overhead["dynamic"] if overhead["dynamic"] else float("nan")
    report = {
        "arch": opts["arch"],
        "epochs_timed": epochs,
        "epoch_seconds_mean": means,
        "epoch_seconds_std": stds,
        "overhead_seconds": {"sr": overhead["smart"], "dwr": overhead["dynamic"]},
        "sr_over_dwr_overhead_ratio": ratio,
        "epochs_to_best_val": {
            m: int(np.argmax(val_curves[m])) + 1 for m in modes
        },
    }
    return report


def cmd_bench(opts: dict, epochs: int) -> int:
    report = run_benchmark(opts, epochs)
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    means = report["epoch_seconds_mean"]
    stds = report["epoch_seconds_std"]
    print(f"bench: {report['arch']} x {report['epochs_timed']} epochs per mode")
    for mode in ("none", "smart", "dynamic"):
        print(f"  {mode:8s} {means[mode]:.4f}s +- {stds[mode]:.4f}s per epoch")
    print(
        f"  overhead: SR {report['overhead_seconds']['sr']:.4f}s, "
        f"DWR {report['overhead_seconds']['dwr']:.4f}s "
        f"(ratio {report['sr_over_dwr_overhead_ratio']:.3f})"
    )
    print(f"  epochs to best val: {report['epochs_to_best_val']}")
    return 0


def cmd_verify(fast: bool) -> int:
    results = run_verification_suite(fast=fast)
    width = max(len(r.name) for r in results)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed = failed or not r.passed
        print(f"{status}  {r.name:<{width}}  {r.detail}")
    return 3 if failed else 0


def build_parser() -> _Parser:
    parser = _Parser(prog="gumbelmask", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train masks on frozen weights")
    p_train.add_argument("--config", default=None)
    _add_key_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None)
    _add_key_flags(p_eval)

    p_ablate = sub.add_parser("ablate", help="run the rescale/weight-transform grid")
    p_ablate.add_argument("--config", default=None)
    p_ablate.add_argument("--archs", default=None, help="comma-separated architectures")
    p_ablate.add_argument("--parallel", type=int, default=1)
    _add_key_flags(p_ablate)

    p_bench = sub.add_parser("bench", help="time rescale strategies per epoch")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--epochs", type=int, default=12)
    _add_key_flags(p_bench)
    # Desk-scale defaults: a conv4-shaped run small enough to time many
    # epochs, with rates that stay stable on deep stacks. The overhead
    # gap per epoch is a few ms, so timing noise calls for many rounds.
    p_bench.set_defaults(
        arch="conv4", batch_size="4", mask_lr="5.0", scale_lr="0.01",
        synthetic_n="16", synthetic_hw="16",
    )

    p_verify = sub.add_parser("verify", help="run the oracle check suite")
    p_verify.add_argument("--fast", action="store_true")

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "verify":
            return cmd_verify(args.fast)
        opts = _collect_opts(args)
        if args.command == "train":
            return cmd_train(opts)
        if args.command == "eval":
            return cmd_eval(opts, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(opts, args.archs, args.parallel)
        if args.command == "bench":
            return cmd_bench(opts, args.epochs)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
