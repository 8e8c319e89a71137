"""Command-line front end.

Commands: train, eval, ablate, audit, synth. A flat key-value config file
supplies defaults; flags override file values. Every run writes a resolved
config snapshot next to its artifacts so it can be reproduced exactly.
Config problems exit with status 2 and a message naming the offending key;
runtime failures exit 1; 0 means all artifacts were written.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import torch

from .config import RunConfig, build_run_config, read_config_file, resolved_text
from .data import ImageFolderSource, SampleSource, load_manifest
from .episodes import ValidatedSplit, validate_split
from .errors import ConfigError, ParseError, ProxyNetError
from .evaluation import evaluate, param_audit
from .model import build_model, load_checkpoint, save_checkpoint
from .plots import plot_ablation, plot_eval_histogram, plot_history
from .synthetic import generate_synthetic, materialize
from .training import AUG_STREAM, TEST_STREAM, TRAIN_STREAM, VAL_STREAM, train, write_history

DATA_ROOT_ENV = "PROXYNET_DATA_ROOT"

ABLATION_AXES = {
    "proxy": [("model.proxy", v) for v in ("learned", "mean", "sum")],
    "metric": [("model.metric", v) for v in ("proxynet3d", "euclidean", "cosine", "fc_relation")],
    "backbone": [("backbone.name", v) for v in ("conv4", "conv6", "resnet10", "resnet18", "resnet34")],
    "augmentation": [("augment.enabled", v) for v in ("true", "false")],
}


def _flag_overrides(args: argparse.Namespace) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if getattr(args, "seed", None) is not None:
        mapping["seed"] = str(args.seed)
    if getattr(args, "proxy", None):
        mapping["model.proxy"] = args.proxy
    if getattr(args, "metric", None):
        mapping["model.metric"] = args.metric
    if getattr(args, "backbone", None):
        mapping["backbone.name"] = args.backbone
    if getattr(args, "out", None):
        mapping["out"] = args.out
    if getattr(args, "n_tasks", None) is not None:
        mapping["eval.n_tasks"] = str(args.n_tasks)
    return mapping


def _merged_mapping(args: argparse.Namespace) -> dict[str, str]:
    if getattr(args, "config", None):
        try:
            mapping = read_config_file(args.config)
        except OSError as exc:
            raise ConfigError("config", f"cannot read '{args.config}': {exc.strerror or exc}") from None
    else:
        mapping = {}
    mapping.update(_flag_overrides(args))
    return mapping


def _pins_model(mapping: dict[str, str]) -> bool:
    return any(key.startswith(("model.", "backbone.")) for key in mapping)


def resolve_data(config: RunConfig) -> tuple[ValidatedSplit, SampleSource]:
    """Materialize the configured dataset and validate its split structure."""
    if config.dataset_kind == "synthetic":
        dataset = generate_synthetic(config.synthetic, config.seed)
        return validate_split(dataset.manifest, dataset.index), dataset.source
    root = config.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError("dataset.root",
                          f"set dataset.root or the {DATA_ROOT_ENV} environment variable")
    base = Path(root)
    folder = base / config.dataset_kind if (base / config.dataset_kind / "manifest.csv").is_file() else base
    manifest_path = folder / "manifest.csv"
    if not manifest_path.is_file():
        raise ConfigError("dataset.root", f"no manifest.csv under '{folder}'")
    manifest, index = load_manifest(manifest_path)
    return validate_split(manifest, index), ImageFolderSource(folder)


def _train_bundle(config: RunConfig, out: Path, log=lambda msg: None):
    """Train one model per the config; returns (model with best weights, result, report paths)."""
    split, source = resolve_data(config)
    torch.manual_seed(config.seed)
    model = build_model(config.model)
    result, optimizer, scheduler = train(
        model, source, config.augment,
        split.split_index("train"), split.split_index("val"),
        config.task, config.train, val_spec=config.eval_task,
        on_epoch=lambda row: log(
            f"epoch {row.epoch}: loss {row.train_loss:.4f} val_acc {row.val_acc:.4f} lr {row.lr:g}"))
    extra = result.trainer_payload(config.train, model, optimizer, scheduler)
    model.load_state_dict(result.best_state)

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.pt", model, extra)
    write_history(out / "history.csv", result.history)
    (out / "config.txt").write_text(resolved_text(config))
    plot_history(result.history, out / "history.png")
    return model, result, split, source


def cmd_train(args: argparse.Namespace) -> int:
    config = build_run_config(_merged_mapping(args))
    out = Path(config.out)
    _, result, _, _ = _train_bundle(config, out, log=lambda msg: print(msg, file=sys.stderr))
    print(f"best val_acc {result.best_val_acc:.4f} at epoch {result.best_epoch}; "
          f"artifacts in {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    mapping = _merged_mapping(args)
    config = build_run_config(mapping)
    expected = config.model if _pins_model(mapping) else None
    model, _ = load_checkpoint(args.checkpoint, expected=expected)
    split, source = resolve_data(config)
    report = evaluate(model, source, config.augment, split.split_index("test"),
                      config.eval_task, n_tasks=config.eval_n_tasks,
                      seed=[config.seed, TEST_STREAM])
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    plot_eval_histogram(report, out / "accuracy_hist.png")
    (out / "config.txt").write_text(resolved_text(config))
    print(report.formatted())
    return 0


def _seed_trace(config: RunConfig) -> dict:
    epochs = range(1, config.train.epochs + 1)
    return {
        "train_episode_stream": [[config.seed, TRAIN_STREAM, e] for e in epochs],
        "augment_stream": [[config.seed, AUG_STREAM, e] for e in epochs],
        "val_stream": ([[config.seed, VAL_STREAM, e] for e in epochs]
                       if config.train.val_resample else [[config.seed, VAL_STREAM]]),
        "test_stream": [config.seed, TEST_STREAM],
    }


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.axis not in ABLATION_AXES:
        raise ConfigError("axis", f"'{args.axis}' is not one of {', '.join(ABLATION_AXES)}")
    base_mapping = _merged_mapping(args)
    base_config = build_run_config(base_mapping)
    out = Path(base_config.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    seed_log: dict = {"seed": base_config.seed, "variants": {}}
    for key, value in ABLATION_AXES[args.axis]:
        label = f"{args.axis}={value}"
        mapping = dict(base_mapping)
        mapping[key] = value
        config = build_run_config(mapping)
        print(f"[{label}] training", file=sys.stderr)
        model, result, split, source = _train_bundle(config, out / value)
        report = evaluate(model, source, config.augment, split.split_index("test"),
                          config.eval_task, n_tasks=config.eval_n_tasks,
                          seed=[config.seed, TEST_STREAM])
        rows.append((label, report.mean_accuracy, report.ci95_half_width,
                     report.n_tasks, result.best_val_acc, result.best_epoch))
        seed_log["variants"][label] = _seed_trace(config)

    grid = out / f"ablation_{args.axis}.csv"
    with open(grid, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "mean_accuracy", "ci95_half_width", "n_tasks",
                         "best_val_acc", "best_epoch"])
        for row in rows:
            writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", row[3],
                             f"{row[4]:.6f}", row[5]])
    (out / "episode_seeds.json").write_text(json.dumps(seed_log, indent=2) + "\n")
    plot_ablation([(r[0], r[1], r[2]) for r in rows], out / f"ablation_{args.axis}.png")

    print(f"{'variant':<28} {'accuracy':>16}")
    for label, mean, hw, *_ in rows:
        print(f"{label:<28} {mean * 100:>8.2f} ± {hw * 100:.2f}")
    print(f"grid written to {grid}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    mapping = _merged_mapping(args)
    config = build_run_config(mapping)
    if getattr(args, "checkpoint", None):
        expected = config.model if _pins_model(mapping) else None
        model, _ = load_checkpoint(args.checkpoint, expected=expected)
    else:
        torch.manual_seed(config.seed)
        model = build_model(config.model)
    audit = param_audit(model)
    print(audit.table())
    if getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "audit.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["part", "trainable_parameters"])
            for name, count in audit.rows:
                writer.writerow([name, count])
            writer.writerow(["total", audit.total])
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = build_run_config(_merged_mapping(args))
    dataset = generate_synthetic(config.synthetic, config.seed)
    materialize(dataset, args.out)
    n_images = config.synthetic.n_classes * config.synthetic.samples_per_class
    print(f"wrote {n_images} images and manifest.csv to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxynet",
        description="Few-shot classifier with learned class proxies and a learned 3D-conv metric.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, n_tasks: bool = False) -> None:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="global random seed")
        p.add_argument("--proxy", help="class-representative operator (learned, mean, sum)")
        p.add_argument("--metric", help="distance metric (proxynet3d, euclidean, cosine, fc_relation)")
        p.add_argument("--backbone", help="embedding network (conv4, conv6, resnet10/18/34)")
        p.add_argument("--out", help="output directory")
        if n_tasks:
            p.add_argument("--n-tasks", type=int, help="number of evaluation tasks")

    p_train = sub.add_parser("train", help="meta-train a model and write its artifacts")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint archive to evaluate")
    common(p_eval, n_tasks=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train and compare variants along one axis")
    p_ablate.add_argument("--axis", required=True,
                          help="proxy, metric, backbone, or augmentation")
    common(p_ablate, n_tasks=True)
    p_ablate.set_defaults(func=cmd_ablate)

    p_audit = sub.add_parser("audit", help="report trainable parameters per model part")
    p_audit.add_argument("--checkpoint", help="audit an existing checkpoint instead of a fresh build")
    common(p_audit)
    p_audit.set_defaults(func=cmd_audit)

    p_synth = sub.add_parser("synth", help="materialize a synthetic dataset to disk")
    p_synth.add_argument("--out", required=True, help="destination directory")
    p_synth.add_argument("--config", help="flat key = value config file")
    p_synth.add_argument("--seed", type=int, help="global random seed")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProxyNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
