"""Episodic meta-training loop.

One epoch is a fixed number of sampled training episodes with one SGD step
per episode, followed by a validation pass whose mean accuracy drives both
reduce-on-plateau learning-rate control and best-model selection. All
randomness flows through numpy generators derived from (seed, stream tag,
epoch), so a checkpointed run resumes on the exact trajectory of an
uninterrupted one.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .data import AugmentationPolicy, SampleSource, episode_tensors
from .episodes import ClassIndex, TaskSpec, sample_episode
from .errors import DivergenceError
from .evaluation import evaluate
from .model import ProxyNetModel
from .relation import episode_loss

# stream tags keep the trainer's rng streams disjoint from one another
TRAIN_STREAM = 0
VAL_STREAM = 1
TEST_STREAM = 2
AUG_STREAM = 3
DATA_STREAM = 4

HISTORY_HEADER = ("epoch", "train_loss", "val_acc", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    episodes_per_epoch: int = 100
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_min_delta: float = 1e-3
    min_lr: float = 1e-4
    monitor: str = "val_acc"
    val_tasks: int = 600
    val_resample: bool = True
    stop_at_val_acc: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.episodes_per_epoch < 1:
            raise ValueError("episodes_per_epoch must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.monitor not in ("val_acc", "train_loss"):
            raise ValueError("monitor must be 'val_acc' or 'train_loss'")
        if self.val_tasks < 2:
            raise ValueError("val_tasks must be >= 2")


class PlateauScheduler:
    """Reduce-on-plateau: after `patience` consecutive epochs without an
    improvement of more than min_delta, multiply lr by factor (floored at
    min_lr) and reset the patience counter. The incumbent best metric is kept
    across reductions."""

    def __init__(self, optimizer: torch.optim.Optimizer, factor: float, patience: int,
                 min_delta: float, min_lr: float, mode: str = "max"):
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.mode = mode
        self.best: float | None = None
        self.bad_epochs = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def _improved(self, metric: float) -> bool:
        if self.best is None:
            return True
        if self.mode == "max":
            return metric > self.best + self.min_delta
        return metric < self.best - self.min_delta

    def step(self, metric: float) -> float:
        if not math.isfinite(metric):
            raise ValueError(f"plateau metric must be finite, got {metric!r}")
        if self._improved(metric):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                for group in self.optimizer.param_groups:
                    group["lr"] = max(group["lr"] * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr

    def state_dict(self) -> dict:
        return {"best": self.best, "bad_epochs": self.bad_epochs}

    def load_state_dict(self, state: dict) -> None:
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainResult:
    best_state: dict
    best_val_acc: float
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False

    def trainer_payload(self, config: TrainConfig, model: ProxyNetModel,
                        optimizer: torch.optim.Optimizer,
                        scheduler: PlateauScheduler) -> dict:
        """Checkpoint fields beyond the model bundle, enough to resume training."""
        return {
            "train_config": asdict(config),
            "epoch": self.history[-1].epoch if self.history else 0,
            "best_val_acc": self.best_val_acc,
            "best_epoch": self.best_epoch,
            "last_state": copy.deepcopy(model.state_dict()),
            "optimizer": optimizer.state_dict(),
            "scheduler": scheduler.state_dict(),
            "history": [asdict(row) for row in self.history],
            "torch_rng": torch.get_rng_state(),
        }


def write_history(path: str | Path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([row.epoch, f"{row.train_loss:.6f}", f"{row.val_acc:.6f}", f"{row.lr:.6g}"])


def train(model: ProxyNetModel, source: SampleSource, policy: AugmentationPolicy,
          train_index: ClassIndex, val_index: ClassIndex, spec: TaskSpec,
          config: TrainConfig, val_spec: TaskSpec | None = None,
          resume: dict | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          ) -> tuple[TrainResult, torch.optim.Optimizer, PlateauScheduler]:
    """Run the episodic loop and return the best-validation-accuracy state.

    Ties in validation accuracy keep the earlier epoch. `resume` takes the
    trainer payload of a previous checkpoint and continues after its last
    completed epoch on the identical rng trajectory.
    """
    val_spec = val_spec or spec
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr,
                                momentum=config.momentum, weight_decay=config.weight_decay)
    scheduler = PlateauScheduler(optimizer, config.plateau_factor, config.plateau_patience,
                                 config.plateau_min_delta, config.min_lr,
                                 mode="min" if config.monitor == "train_loss" else "max")

    start_epoch = 1
    result = TrainResult(best_state=copy.deepcopy(model.state_dict()),
                         best_val_acc=-1.0, best_epoch=0)
    if resume is not None:
        model.load_state_dict(resume["last_state"])
        optimizer.load_state_dict(resume["optimizer"])
        scheduler.load_state_dict(resume["scheduler"])
        result.best_val_acc = resume["best_val_acc"]
        result.best_epoch = resume["best_epoch"]
        result.history = [EpochRecord(**row) for row in resume["history"]]
        start_epoch = resume["epoch"] + 1

    for epoch in range(start_epoch, config.epochs + 1):
        episode_rng = np.random.default_rng([config.seed, TRAIN_STREAM, epoch])
        aug_rng = np.random.default_rng([config.seed, AUG_STREAM, epoch])
        lr_in_effect = scheduler.lr

        model.train()
        losses = []
        for episode_idx in range(config.episodes_per_epoch):
            episode = sample_episode(train_index, spec, episode_rng)
            sx, sy, qx, qy = episode_tensors(episode, source, policy, train_mode=True, rng=aug_rng)
            logits = model(sx, sy, qx, spec.n_way)
            loss = episode_loss(logits, qy)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise DivergenceError(epoch, episode_idx, loss_value)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss_value)
        train_loss = float(np.mean(losses))

        val_key = [config.seed, VAL_STREAM, epoch] if config.val_resample else [config.seed, VAL_STREAM]
        report = evaluate(model, source, policy, val_index, val_spec,
                          n_tasks=config.val_tasks, seed=val_key)
        val_acc = report.mean_accuracy

        record = EpochRecord(epoch=epoch, train_loss=train_loss, val_acc=val_acc, lr=lr_in_effect)
        result.history.append(record)
        if on_epoch is not None:
            on_epoch(record)

        if val_acc > result.best_val_acc:
            result.best_val_acc = val_acc
            result.best_epoch = epoch
            result.best_state = copy.deepcopy(model.state_dict())

        scheduler.step(train_loss if config.monitor == "train_loss" else val_acc)

        if config.stop_at_val_acc is not None and val_acc >= config.stop_at_val_acc:
            result.stopped_early = True
            break

    return result, optimizer, scheduler
