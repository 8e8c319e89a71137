"""Meta-test evaluation, confidence intervals, and the parameter audit.

Accuracy is averaged per task (not pooled over queries) and reported with a
normal-approximation 95% confidence interval over the sampled tasks. Each
task draws from its own rng stream derived from (seed, task index), so a
report is reproducible given its seed and task count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbones import count_parameters
from .data import AugmentationPolicy, SampleSource, episode_tensors
from .episodes import ClassIndex, TaskSpec, sample_episode
from .errors import InsufficientTasksError
from .model import ProxyNetModel

Z_95 = 1.96

AUDIT_ROWS = ("backbone", "weight_net", "se_block", "relation_convs", "other")


def confidence_interval(accuracies: Sequence[float]) -> tuple[float, float]:
    """Mean and 1.96 * sample_std / sqrt(n) half-width over per-task accuracies."""
    n = len(accuracies)
    if n < 2:
        raise InsufficientTasksError(n)
    arr = np.asarray(accuracies, dtype=np.float64)
    return float(arr.mean()), float(Z_95 * arr.std(ddof=1) / np.sqrt(n))


def format_accuracy(mean: float, half_width: float) -> str:
    """Percent rendering used in reports, e.g. '67.52 ± 0.97'."""
    return f"{mean * 100:.2f} ± {half_width * 100:.2f}"


@dataclass(frozen=True)
class EvalReport:
    mean_accuracy: float
    ci95_half_width: float
    n_tasks: int
    spec: TaskSpec
    seed: tuple[int, ...]
    per_task: tuple[float, ...]

    def __post_init__(self):
        if self.n_tasks != len(self.per_task):
            raise ValueError("n_tasks must equal the number of per-task accuracies")

    def formatted(self) -> str:
        return format_accuracy(self.mean_accuracy, self.ci95_half_width)

    def to_json(self) -> str:
        payload = {
            "mean": self.mean_accuracy,
            "ci95": self.ci95_half_width,
            "n_tasks": self.n_tasks,
            "spec": asdict(self.spec),
            "seed": list(self.seed),
            "per_task": list(self.per_task),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(mean_accuracy=payload["mean"], ci95_half_width=payload["ci95"],
                   n_tasks=payload["n_tasks"], spec=TaskSpec(**payload["spec"]),
                   seed=tuple(payload["seed"]), per_task=tuple(payload["per_task"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _seed_key(seed: int | Sequence[int]) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def evaluate(model: ProxyNetModel, source: SampleSource, policy: AugmentationPolicy,
             index: ClassIndex, spec: TaskSpec, n_tasks: int = 600,
             seed: int | Sequence[int] = 0) -> EvalReport:
    """Sample n_tasks episodes, classify queries by argmax, report mean and CI.

    Runs in evaluation mode under no_grad; parameters and normalization
    statistics are left untouched and the model's mode flag is restored.
    """
    if n_tasks < 2:
        raise InsufficientTasksError(n_tasks)
    key = _seed_key(seed)
    was_training = model.training
    model.eval()
    accuracies = []
    try:
        with torch.no_grad():
            for task_idx in range(n_tasks):
                rng = np.random.default_rng([*key, task_idx])
                episode = sample_episode(index, spec, rng)
                sx, sy, qx, qy = episode_tensors(episode, source, policy, train_mode=False)
                logits = model(sx, sy, qx, spec.n_way)
                predictions = logits.argmax(dim=1)
                accuracies.append(float((predictions == qy).float().mean()))
    finally:
        model.train(was_training)
    mean, half_width = confidence_interval(accuracies)
    return EvalReport(mean_accuracy=mean, ci95_half_width=half_width, n_tasks=n_tasks,
                      spec=spec, seed=key, per_task=tuple(accuracies))


@dataclass(frozen=True)
class ParamAudit:
    rows: tuple[tuple[str, int], ...]
    total: int

    def count(self, name: str) -> int:
        return dict(self.rows)[name]

    def table(self) -> str:
        """Two-column text table, one row per part plus the total."""
        width = max(len(name) for name, _ in self.rows + (("total", 0),))
        lines = [f"{name:<{width}}  {count:>10,}" for name, count in self.rows]
        lines.append(f"{'total':<{width}}  {self.total:>10,}")
        return "\n".join(lines)


def param_audit(model: ProxyNetModel) -> ParamAudit:
    """Trainable-parameter counts per part; total always equals their sum."""
    total = count_parameters(model)
    backbone = count_parameters(model.backbone)
    weight_net = count_parameters(model.proxy.weight_net) if hasattr(model.proxy, "weight_net") else 0
    se_block = 0
    relation_convs = 0
    scorer = getattr(model.metric, "scorer", None)
    if scorer is not None:
        se_block = count_parameters(scorer.se)
        relation_convs = count_parameters(scorer.blocks) + count_parameters(scorer.reduce)
    other = total - backbone - weight_net - se_block - relation_convs
    rows = (("backbone", backbone), ("weight_net", weight_net), ("se_block", se_block),
            ("relation_convs", relation_convs), ("other", other))
    return ParamAudit(rows=rows, total=total)
