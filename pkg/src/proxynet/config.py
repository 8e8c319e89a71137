"""Run configuration: flat `key = value` text files with dotted section keys.

Command-line flags override file values; the assembled RunConfig can be
serialized back to the same format as a resolved snapshot that reproduces
the run exactly. Every validation failure names the offending key.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .backbones import BACKBONE_NAMES, BackboneConfig
from .data import AugmentationPolicy
from .episodes import TaskSpec
from .errors import ConfigError, ParseError
from .model import ModelConfig
from .proxy import PROXY_KINDS
from .relation import METRIC_KINDS
from .synthetic import SyntheticSpec
from .training import TrainConfig

DATASET_KINDS = ("cub", "mini_imagenet", "synthetic")

# epochs used when the config omits train.epochs
DEFAULT_EPOCHS = {"cub": 300, "mini_imagenet": 600, "synthetic": 20}


def parse_config_text(text: str, path: str = "<config>") -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines are skipped."""
    mapping: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(path, line_no, "expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ParseError(path, line_no, "empty key")
        if key in mapping:
            raise ParseError(path, line_no, f"duplicate key '{key}'")
        mapping[key] = value.strip()
    return mapping


def read_config_file(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(), path=str(path))


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got '{value}'") from None


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(key, f"expected a number, got '{value}'") from None


def _as_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(key, f"expected true/false, got '{value}'")


def _as_choice(key: str, value: str, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise ConfigError(key, f"'{value}' is not one of {', '.join(choices)}")
    return value


def _as_opt_float(key: str, value: str) -> float | None:
    if value.lower() in ("", "none", "off"):
        return None
    return _as_float(key, value)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out: str
    dataset_kind: str
    data_root: str | None
    synthetic: SyntheticSpec
    model: ModelConfig
    task: TaskSpec
    eval_task: TaskSpec
    eval_n_tasks: int
    train: TrainConfig
    augment_enabled: bool
    augment: AugmentationPolicy


# key -> kind tag, used both for validation and for snapshot ordering
_KNOWN_KEYS = (
    "seed", "out",
    "dataset.kind", "dataset.root", "dataset.n_classes", "dataset.samples_per_class",
    "dataset.image_size", "dataset.noise_std", "dataset.train_classes",
    "dataset.val_classes", "dataset.test_classes",
    "backbone.name", "backbone.width",
    "model.proxy", "model.metric", "model.proxy_normalize",
    "task.n_way", "task.k_shot", "task.t_query",
    "eval.n_way", "eval.k_shot", "eval.t_query", "eval.n_tasks",
    "train.epochs", "train.episodes_per_epoch", "train.lr", "train.momentum",
    "train.weight_decay", "train.plateau_factor", "train.plateau_patience",
    "train.plateau_min_delta", "train.min_lr", "train.monitor", "train.val_tasks",
    "train.val_resample", "train.stop_at_val_acc",
    "augment.enabled", "augment.resize_to", "augment.crop_to", "augment.random_crop",
    "augment.brightness", "augment.contrast", "augment.saturation", "augment.flip_prob",
)


def build_run_config(mapping: dict[str, str]) -> RunConfig:
    """Assemble and validate a RunConfig from a flat key-value mapping."""
    for key in mapping:
        if key not in _KNOWN_KEYS:
            raise ConfigError(key, "unknown key")

    def get(key: str, default: str) -> str:
        return mapping.get(key, default)

    seed = _as_int("seed", get("seed", "0"))
    out = get("out", "runs/run")
    dataset_kind = _as_choice("dataset.kind", get("dataset.kind", "synthetic"), DATASET_KINDS)
    data_root = mapping.get("dataset.root") or None

    n_classes = _as_int("dataset.n_classes", get("dataset.n_classes", "10"))
    samples_per_class = _as_int("dataset.samples_per_class", get("dataset.samples_per_class", "40"))
    image_size = _as_int("dataset.image_size", get("dataset.image_size", "84"))
    noise_std = _as_float("dataset.noise_std", get("dataset.noise_std", "0.02"))
    split_classes = tuple(
        _as_int(key, get(key, "0"))
        for key in ("dataset.train_classes", "dataset.val_classes", "dataset.test_classes"))
    try:
        synthetic = SyntheticSpec(n_classes=n_classes, samples_per_class=samples_per_class,
                                  image_size=image_size, noise_std=noise_std,
                                  train_classes=split_classes[0], val_classes=split_classes[1],
                                  test_classes=split_classes[2])
    except ValueError as exc:
        raise ConfigError("dataset", str(exc)) from None

    backbone_name = _as_choice("backbone.name", get("backbone.name", "conv4"), BACKBONE_NAMES)
    width = _as_int("backbone.width", get("backbone.width", "64"))
    if width < 1:
        raise ConfigError("backbone.width", "must be >= 1")
    proxy = _as_choice("model.proxy", get("model.proxy", "learned"), PROXY_KINDS)
    metric = _as_choice("model.metric", get("model.metric", "proxynet3d"), METRIC_KINDS)
    normalize = _as_choice("model.proxy_normalize", get("model.proxy_normalize", "softmax"),
                           ("softmax", "none"))
    model = ModelConfig(backbone=BackboneConfig(name=backbone_name, width=width),
                        proxy=proxy, metric=metric, proxy_normalize=normalize)

    def task_spec(prefix: str, defaults: tuple[int, int, int]) -> TaskSpec:
        n_way = _as_int(f"{prefix}.n_way", get(f"{prefix}.n_way", str(defaults[0])))
        k_shot = _as_int(f"{prefix}.k_shot", get(f"{prefix}.k_shot", str(defaults[1])))
        t_query = _as_int(f"{prefix}.t_query", get(f"{prefix}.t_query", str(defaults[2])))
        for key, value in ((f"{prefix}.n_way", n_way),):
            if value < 2:
                raise ConfigError(key, "must be >= 2")
        for key, value in ((f"{prefix}.k_shot", k_shot), (f"{prefix}.t_query", t_query)):
            if value < 1:
                raise ConfigError(key, "must be >= 1")
        return TaskSpec(n_way=n_way, k_shot=k_shot, t_query=t_query)

    task = task_spec("task", (5, 1, 15))
    eval_task = task_spec("eval", (task.n_way, task.k_shot, 15))
    eval_n_tasks = _as_int("eval.n_tasks", get("eval.n_tasks", "600"))
    if eval_n_tasks < 2:
        raise ConfigError("eval.n_tasks", "must be >= 2")

    epochs = _as_int("train.epochs", get("train.epochs", str(DEFAULT_EPOCHS[dataset_kind])))
    try:
        train = TrainConfig(
            epochs=epochs,
            episodes_per_epoch=_as_int("train.episodes_per_epoch", get("train.episodes_per_epoch", "100")),
            lr=_as_float("train.lr", get("train.lr", "0.1")),
            momentum=_as_float("train.momentum", get("train.momentum", "0.9")),
            weight_decay=_as_float("train.weight_decay", get("train.weight_decay", "0")),
            plateau_factor=_as_float("train.plateau_factor", get("train.plateau_factor", "0.5")),
            plateau_patience=_as_int("train.plateau_patience", get("train.plateau_patience", "10")),
            plateau_min_delta=_as_float("train.plateau_min_delta", get("train.plateau_min_delta", "1e-3")),
            min_lr=_as_float("train.min_lr", get("train.min_lr", "1e-4")),
            monitor=_as_choice("train.monitor", get("train.monitor", "val_acc"), ("val_acc", "train_loss")),
            val_tasks=_as_int("train.val_tasks", get("train.val_tasks", "600")),
            val_resample=_as_bool("train.val_resample", get("train.val_resample", "true")),
            stop_at_val_acc=_as_opt_float("train.stop_at_val_acc", get("train.stop_at_val_acc", "none")),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None

    augment_enabled = _as_bool("augment.enabled", get("augment.enabled", "true"))
    try:
        augment = AugmentationPolicy(
            resize_to=_as_int("augment.resize_to", get("augment.resize_to", "92")),
            crop_to=_as_int("augment.crop_to", get("augment.crop_to", "84")),
            random_crop=_as_bool("augment.random_crop", get("augment.random_crop", "true")),
            brightness=_as_float("augment.brightness", get("augment.brightness", "0.4")),
            contrast=_as_float("augment.contrast", get("augment.contrast", "0.4")),
            saturation=_as_float("augment.saturation", get("augment.saturation", "0.4")),
            horizontal_flip_prob=_as_float("augment.flip_prob", get("augment.flip_prob", "0.5")),
        )
    except ValueError as exc:
        raise ConfigError("augment", str(exc)) from None
    if not augment_enabled:
        augment = augment.disabled()

    return RunConfig(seed=seed, out=out, dataset_kind=dataset_kind, data_root=data_root,
                     synthetic=synthetic, model=model, task=task, eval_task=eval_task,
                     eval_n_tasks=eval_n_tasks, train=train,
                     augment_enabled=augment_enabled, augment=augment)


def load_run_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """File values (if any) merged with flag overrides, then validated."""
    mapping = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        mapping[key] = value
    return build_run_config(mapping)


def resolved_text(config: RunConfig) -> str:
    """Snapshot in the input format; feeding it back reproduces the run."""
    c = config
    values = {
        "seed": c.seed, "out": c.out,
        "dataset.kind": c.dataset_kind, "dataset.root": c.data_root or "",
        "dataset.n_classes": c.synthetic.n_classes,
        "dataset.samples_per_class": c.synthetic.samples_per_class,
        "dataset.image_size": c.synthetic.image_size,
        "dataset.noise_std": c.synthetic.noise_std,
        "dataset.train_classes": c.synthetic.train_classes,
        "dataset.val_classes": c.synthetic.val_classes,
        "dataset.test_classes": c.synthetic.test_classes,
        "backbone.name": c.model.backbone.name, "backbone.width": c.model.backbone.width,
        "model.proxy": c.model.proxy, "model.metric": c.model.metric,
        "model.proxy_normalize": c.model.proxy_normalize,
        "task.n_way": c.task.n_way, "task.k_shot": c.task.k_shot, "task.t_query": c.task.t_query,
        "eval.n_way": c.eval_task.n_way, "eval.k_shot": c.eval_task.k_shot,
        "eval.t_query": c.eval_task.t_query, "eval.n_tasks": c.eval_n_tasks,
        "train.epochs": c.train.epochs, "train.episodes_per_epoch": c.train.episodes_per_epoch,
        "train.lr": c.train.lr, "train.momentum": c.train.momentum,
        "train.weight_decay": c.train.weight_decay,
        "train.plateau_factor": c.train.plateau_factor,
        "train.plateau_patience": c.train.plateau_patience,
        "train.plateau_min_delta": c.train.plateau_min_delta,
        "train.min_lr": c.train.min_lr, "train.monitor": c.train.monitor,
        "train.val_tasks": c.train.val_tasks, "train.val_resample": c.train.val_resample,
        "train.stop_at_val_acc": "none" if c.train.stop_at_val_acc is None else c.train.stop_at_val_acc,
        "augment.enabled": c.augment_enabled, "augment.resize_to": c.augment.resize_to,
        "augment.crop_to": c.augment.crop_to, "augment.random_crop": c.augment.random_crop,
        "augment.brightness": c.augment.brightness, "augment.contrast": c.augment.contrast,
        "augment.saturation": c.augment.saturation,
        "augment.flip_prob": c.augment.horizontal_flip_prob,
    }
    lines = ["# resolved run configuration"]
    for key in _KNOWN_KEYS:
        value = values[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
