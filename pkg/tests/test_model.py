"""Model bundle wiring, checkpoint archive contract, prototype equivalence."""

import numpy as np
import pytest
import torch

from proxynet.backbones import BackboneConfig
from proxynet.errors import CheckpointMismatchError
from proxynet.model import (CHECKPOINT_FORMAT, ModelConfig, ProxyNetModel, build_model,
                            load_checkpoint, save_checkpoint)
from proxynet.proxy import MeanProxy, compute_proxies
from proxynet.relation import EuclideanHead

TINY = ModelConfig(backbone=BackboneConfig(name="conv4", width=8))


def episode(n_way, k_shot, t_query, seed):
    g = torch.Generator().manual_seed(seed)
    sx = torch.randn(n_way * k_shot, 3, 84, 84, generator=g)
    sy = torch.arange(n_way).repeat_interleave(k_shot)
    qx = torch.randn(n_way * t_query, 3, 84, 84, generator=g)
    return sx, sy, qx


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.proxy, cfg.metric, cfg.proxy_normalize) == ("learned", "proxynet3d", "softmax")

    def test_rejects_unknown_fields(self):
        with pytest.raises(ValueError):
            ModelConfig(proxy="median")
        with pytest.raises(ValueError):
            ModelConfig(metric="manhattan")
        with pytest.raises(ValueError):
            ModelConfig(proxy_normalize="l2")

    def test_dict_roundtrip(self):
        cfg = ModelConfig(backbone=BackboneConfig(name="conv6"), proxy="sum", metric="cosine")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_logit_shape(self):
        model = build_model(TINY).eval()
        sx, sy, qx = episode(3, 2, 4, seed=0)
        with torch.no_grad():
            logits = model(sx, sy, qx, 3)
        assert logits.shape == (12, 3)
        assert torch.isfinite(logits).all()

    def test_embed_episode_splits_one_batch(self):
        model = build_model(TINY).eval()
        sx, _, qx = episode(2, 1, 2, seed=1)
        with torch.no_grad():
            sf, qf = model.embed_episode(sx, qx)
            both = model.backbone(torch.cat([sx, qx]))
        assert torch.equal(torch.cat([sf, qf]), both)

    def test_feature_size_drives_heads(self):
        model = build_model(TINY)
        assert model.feature_size == (8, 5, 5)
        assert model.stack_order == "query,proxy"

    def test_every_bundle_combination_builds(self):
        for proxy in ("learned", "mean", "sum"):
            for metric in ("proxynet3d", "euclidean", "cosine", "fc_relation"):
                cfg = ModelConfig(backbone=BackboneConfig(width=4), proxy=proxy, metric=metric)
                model = build_model(cfg).eval()
                sx, sy, qx = episode(2, 2, 1, seed=2)
                with torch.no_grad():
                    assert model(sx, sy, qx, 2).shape == (2, 2)

    def test_episode_proxies_shapes(self):
        model = build_model(TINY).eval()
        sx, sy, _ = episode(3, 2, 1, seed=3)
        with torch.no_grad():
            proxies, weights = model.episode_proxies(sx, sy, 3)
        assert proxies.shape == (3, 8, 5, 5)
        assert weights.shape == (3, 2)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = build_model(TINY)
        path = tmp_path / "model.pt"
        save_checkpoint(path, model, extra={"epoch": 3})
        loaded, payload = load_checkpoint(path, expected=TINY)
        for key, value in model.state_dict().items():
            assert torch.equal(payload["state"][key], value)
            assert torch.equal(loaded.state_dict()[key], value)
        assert payload["format"] == CHECKPOINT_FORMAT
        assert payload["trainer"] == {"epoch": 3}

    def test_loaded_model_predicts_identically(self, tmp_path):
        model = build_model(TINY).eval()
        path = tmp_path / "model.pt"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        loaded.eval()
        sx, sy, qx = episode(2, 2, 3, seed=4)
        with torch.no_grad():
            assert torch.equal(model(sx, sy, qx, 2), loaded(sx, sy, qx, 2))

    def test_config_mismatch_rejected(self, tmp_path):
        path = tmp_path / "model.pt"
        save_checkpoint(path, build_model(TINY))
        other = ModelConfig(backbone=BackboneConfig(width=8), proxy="mean")
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, expected=other)

    def test_tampered_stack_order_rejected(self, tmp_path):
        path = tmp_path / "model.pt"
        save_checkpoint(path, build_model(TINY))
        payload = torch.load(path, weights_only=True)
        payload["stack_order"] = "proxy,query"
        torch.save(payload, path)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path)

    def test_no_expected_skips_config_check(self, tmp_path):
        path = tmp_path / "model.pt"
        save_checkpoint(path, build_model(TINY))
        loaded, _ = load_checkpoint(path)
        assert loaded.config == TINY


class TestPrototypeEquivalence:
    """mean proxy + euclidean metric must classify like nearest-mean-prototype."""

    def test_feature_level_agreement(self):
        rng = np.random.default_rng(5)
        head = EuclideanHead()
        proxy_op = MeanProxy()
        for _ in range(100):
            n, k, t = int(rng.integers(2, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
            feats = torch.from_numpy(rng.normal(size=(n * k, 4, 3, 3)).astype(np.float32))
            labels = torch.arange(n).repeat_interleave(k)
            queries = torch.from_numpy(rng.normal(size=(n * t, 4, 3, 3)).astype(np.float32))
            proxies, _ = compute_proxies(proxy_op, feats, labels, n)
            pred = head(queries, proxies).argmax(dim=1).numpy()

            flat = feats.numpy().reshape(n * k, -1).astype(np.float64)
            prototypes = np.stack([flat[labels.numpy() == c].mean(axis=0) for c in range(n)])
            qflat = queries.numpy().reshape(n * t, -1).astype(np.float64)
            d2 = ((qflat[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=-1)
            assert (pred == d2.argmin(axis=1)).all()

    def test_model_level_agreement(self):
        cfg = ModelConfig(backbone=BackboneConfig(width=8), proxy="mean", metric="euclidean")
        model = build_model(cfg).eval()
        torch.manual_seed(6)
        for _ in range(10):
            sx, sy, qx = episode(3, 2, 4, seed=int(torch.randint(0, 10_000, (1,))))
            with torch.no_grad():
                pred = model(sx, sy, qx, 3).argmax(dim=1).numpy()
                sf, qf = model.embed_episode(sx, qx)
            flat = sf.numpy().reshape(6, -1).astype(np.float64)
            prototypes = np.stack([flat[sy.numpy() == c].mean(axis=0) for c in range(3)])
            qflat = qf.numpy().reshape(12, -1).astype(np.float64)
            d2 = ((qflat[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=-1)
            assert (pred == d2.argmin(axis=1)).all()
