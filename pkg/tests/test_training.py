"""Trainer: plateau scheduler semantics, checkpoint selection, determinism, resume."""

import csv
import math

import numpy as np
import pytest
import torch

from proxynet.backbones import BackboneConfig
from proxynet.data import AugmentationPolicy
from proxynet.episodes import TaskSpec, validate_split
from proxynet.errors import DivergenceError
from proxynet.model import ModelConfig, build_model
from proxynet.synthetic import SyntheticSpec, generate_synthetic
from proxynet.training import (AUG_STREAM, DATA_STREAM, HISTORY_HEADER, TEST_STREAM,
                               TRAIN_STREAM, VAL_STREAM, EpochRecord, PlateauScheduler,
                               TrainConfig, train, write_history)

TINY_MODEL = ModelConfig(backbone=BackboneConfig(width=4), proxy="mean", metric="euclidean")
SPEC = TaskSpec(n_way=2, k_shot=1, t_query=2)


@pytest.fixture(scope="module")
def dataset():
    data = generate_synthetic(
        SyntheticSpec(n_classes=6, samples_per_class=8, noise_std=0.05,
                      train_classes=2, val_classes=2, test_classes=2), seed=11)
    return data, validate_split(data.manifest, data.index)


def sched(lr=1.0, factor=0.5, patience=3, min_delta=0.01, min_lr=1e-4, mode="max"):
    params = [torch.nn.Parameter(torch.zeros(1))]
    opt = torch.optim.SGD(params, lr=lr)
    return PlateauScheduler(opt, factor, patience, min_delta, min_lr, mode=mode)


def quick_config(**kw):
    base = dict(epochs=2, episodes_per_epoch=3, lr=0.05, val_tasks=4, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def run(model, dataset, config, **kw):
    data, split = dataset
    return train(model, data.source, AugmentationPolicy.disabled(),
                 split.split_index("train"), split.split_index("val"), SPEC, config, **kw)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.momentum, cfg.weight_decay) == (0.1, 0.9, 0.0)
        assert (cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr) == (0.5, 10, 1e-4)

    def test_validation(self):
        for bad in (dict(epochs=0), dict(episodes_per_epoch=0), dict(lr=-0.1),
                    dict(plateau_factor=1.0), dict(plateau_patience=0),
                    dict(monitor="acc"), dict(val_tasks=1)):
            with pytest.raises(ValueError):
                TrainConfig(**bad)

    def test_zero_lr_allowed(self):
        assert TrainConfig(lr=0.0).lr == 0.0

    def test_stream_tags_are_distinct(self):
        tags = (TRAIN_STREAM, VAL_STREAM, TEST_STREAM, AUG_STREAM, DATA_STREAM)
        assert len(set(tags)) == 5


class TestPlateauScheduler:
    def test_improving_metric_keeps_lr(self):
        s = sched()
        for m in (0.1, 0.3, 0.5, 0.7, 0.9):
            assert s.step(m) == 1.0
        assert s.bad_epochs == 0

    def test_flat_metric_halves_once_after_patience(self):
        s = sched(patience=3)
        s.step(0.5)
        lrs = [s.step(0.5) for _ in range(4)]
        # bad epochs 1, 2, 3 trigger at the third; counter resets so the
        # fourth flat epoch does not halve again
        assert lrs == [1.0, 1.0, 0.5, 0.5]

    def test_hand_traced_thirty_epochs(self):
        # patience 3, factor 0.5, min_delta 0.01, floor 0.05; expected lrs
        # worked out by hand from the plateau rule, not recomputed
        metrics = ([0.10, 0.20, 0.30, 0.30, 0.30, 0.30]   # rise, then 3 flat: cut at e6
                   + [0.305, 0.305, 0.305, 0.305]          # within min_delta of 0.30: cut at e9
                   + [0.40, 0.40, 0.40, 0.40]              # new best at e11, then flat: cut at e14
                   + [0.39] * 16)                           # never improves again: cuts e17, e20, ...
        expected = ([1.0] * 5
                    + [0.5] * 3      # e6 cuts; counter restarts so e9 is the next cut
                    + [0.25] * 5     # e9 cuts; e11 improves, flat again until e14
                    + [0.125] * 3    # e14 cuts
                    + [0.0625] * 3   # e17 cuts
                    + [0.05] * 11)   # e20 would give 0.03125: clamped to the 0.05 floor
        s = sched(patience=3, min_delta=0.01, min_lr=0.05)
        got = [s.step(m) for m in metrics]
        assert got == expected

    def test_min_lr_floor(self):
        s = sched(lr=0.002, patience=1, min_lr=1e-3)
        s.step(0.5)
        assert s.step(0.5) == 1e-3
        assert s.step(0.5) == 1e-3

    def test_best_kept_across_reduction(self):
        s = sched(patience=1)
        s.step(0.9)
        s.step(0.5)   # reduction, but best stays 0.9
        assert s.best == 0.9
        # 0.85 beats everything seen since the cut but not the incumbent best,
        # so it is still a bad epoch and patience 1 cuts again
        assert s.step(0.85) == 0.25
        assert s.best == 0.9

    def test_mode_min(self):
        s = sched(patience=2, mode="min")
        s.step(1.0)
        assert s.step(0.5) == 1.0   # improvement under min mode
        s.step(0.6)
        assert s.step(0.6) == 0.5

    def test_non_finite_metric_rejected(self):
        s = sched()
        with pytest.raises(ValueError):
            s.step(float("nan"))

    def test_state_roundtrip(self):
        s = sched(patience=5)
        s.step(0.5)
        s.step(0.4)
        t = sched(patience=5)
        t.load_state_dict(s.state_dict())
        assert (t.best, t.bad_epochs) == (0.5, 1)


class TestTrainLoop:
    def test_two_epoch_structure(self, dataset):
        model = build_model(TINY_MODEL)
        result, optimizer, scheduler = run(model, dataset, quick_config())
        assert [r.epoch for r in result.history] == [1, 2]
        assert all(math.isfinite(r.train_loss) for r in result.history)
        assert all(0.0 <= r.val_acc <= 1.0 for r in result.history)
        assert result.best_epoch in (1, 2)
        assert result.best_val_acc == max(r.val_acc for r in result.history)
        assert not result.stopped_early
        assert scheduler.lr <= 0.05

    def test_lr_column_is_rate_in_effect(self, dataset):
        # patience 1 with a flat metric cuts every epoch, so the logged lr of
        # epoch e must be the value BEFORE that epoch's scheduler step
        model = build_model(TINY_MODEL)
        config = quick_config(epochs=3, lr=0.08, plateau_patience=1, plateau_min_delta=1.0,
                              val_resample=False)
        result, _, _ = run(model, dataset, config)
        lrs = [r.lr for r in result.history]
        assert lrs[0] == pytest.approx(0.08)
        assert lrs[1] <= 0.08

    def test_zero_lr_leaves_parameters_bitwise(self, dataset):
        model = build_model(TINY_MODEL)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        result, _, _ = run(model, dataset, quick_config(lr=0.0, momentum=0.0))
        after = model.state_dict()
        for key, value in before.items():
            if "running" in key or "num_batches" in key:
                continue  # train-mode batch norm still updates running stats
            assert torch.equal(after[key], value), key

    def test_same_seed_same_history(self, dataset):
        torch.manual_seed(0)
        a, _, _ = run(build_model(TINY_MODEL), dataset, quick_config())
        torch.manual_seed(0)
        b, _, _ = run(build_model(TINY_MODEL), dataset, quick_config())
        assert a.history == b.history
        assert a.best_epoch == b.best_epoch

    def test_val_tie_keeps_earlier_epoch(self, dataset):
        # frozen model + fixed validation tasks: every epoch scores the same
        model = build_model(TINY_MODEL)
        config = quick_config(epochs=3, lr=0.0, momentum=0.0, val_resample=False)
        result, _, _ = run(model, dataset, config)
        accs = [r.val_acc for r in result.history]
        assert accs[0] == accs[1] == accs[2]
        assert result.best_epoch == 1

    def test_resample_draws_fresh_validation_tasks(self, dataset):
        model = build_model(TINY_MODEL)
        config = quick_config(epochs=2, lr=0.0, momentum=0.0, val_resample=True, val_tasks=6)
        result, _, _ = run(model, dataset, config)
        # frozen model, different tasks: equality would mean the val key
        # ignored the epoch (6 two-way tasks rarely tie exactly)
        assert result.history[0].val_acc != result.history[1].val_acc

    def test_divergence_raises_with_location(self, dataset, monkeypatch):
        import proxynet.training as training_mod

        def bad_loss(logits, labels):
            return torch.tensor(float("nan"), requires_grad=True)

        monkeypatch.setattr(training_mod, "episode_loss", bad_loss)
        with pytest.raises(DivergenceError) as err:
            run(build_model(TINY_MODEL), dataset, quick_config())
        assert err.value.epoch == 1
        assert err.value.episode == 0

    def test_stop_at_val_acc(self, dataset):
        model = build_model(TINY_MODEL)
        result, _, _ = run(model, dataset, quick_config(epochs=50, stop_at_val_acc=0.0))
        assert result.stopped_early
        assert len(result.history) == 1

    def test_on_epoch_callback(self, dataset):
        seen = []
        run(build_model(TINY_MODEL), dataset, quick_config(), on_epoch=seen.append)
        assert [r.epoch for r in seen] == [1, 2]
        assert all(isinstance(r, EpochRecord) for r in seen)


class TestResume:
    def test_resume_matches_uninterrupted_run(self, dataset):
        config = quick_config(epochs=3, lr=0.05)

        torch.manual_seed(7)
        straight_model = build_model(TINY_MODEL)
        straight, _, _ = run(straight_model, dataset, config)

        torch.manual_seed(7)
        model = build_model(TINY_MODEL)
        part, optimizer, scheduler = run(model, dataset, quick_config(epochs=2, lr=0.05))
        payload = part.trainer_payload(config, model, optimizer, scheduler)

        resumed_model = build_model(TINY_MODEL)
        resumed, _, _ = run(resumed_model, dataset, config, resume=payload)

        assert [r.epoch for r in resumed.history] == [1, 2, 3]
        for a, b in zip(straight.history, resumed.history):
            assert a.epoch == b.epoch
            assert a.train_loss == b.train_loss
            assert a.val_acc == b.val_acc
        for key, value in straight_model.state_dict().items():
            assert torch.equal(resumed_model.state_dict()[key], value), key

    def test_payload_carries_resume_fields(self, dataset):
        model = build_model(TINY_MODEL)
        config = quick_config()
        result, optimizer, scheduler = run(model, dataset, config)
        payload = result.trainer_payload(config, model, optimizer, scheduler)
        assert payload["epoch"] == 2
        assert payload["train_config"]["epochs"] == 2
        assert set(payload) >= {"last_state", "optimizer", "scheduler", "history",
                                "best_val_acc", "best_epoch"}


class TestHistoryFile:
    def test_roundtrip(self, tmp_path):
        rows = [EpochRecord(1, 2.345678, 0.5, 0.1), EpochRecord(2, 1.0, 0.75, 0.05)]
        path = tmp_path / "history.csv"
        write_history(path, rows)
        with open(path) as fh:
            got = list(csv.reader(fh))
        assert got[0] == list(HISTORY_HEADER)
        assert got[1] == ["1", "2.345678", "0.500000", "0.1"]
        assert got[2] == ["2", "1.000000", "0.750000", "0.05"]
