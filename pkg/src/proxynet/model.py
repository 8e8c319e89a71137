"""Full model bundle: backbone + proxy operator + metric head.

Support and query images share one embedding network and are embedded in a
single batch, so training-mode batch-norm statistics come from the whole
episode. The bundle is checkpointed together with the config that built it;
loading refuses a checkpoint whose config differs from the requested one.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn

from .backbones import IMAGE_SIZE, BackboneConfig, build_backbone, feature_shape
from .errors import CheckpointMismatchError
from .proxy import PROXY_KINDS, build_proxy, compute_proxies
from .relation import METRIC_KINDS, STACK_ORDER, build_metric

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    proxy: str = "learned"
    metric: str = "proxynet3d"
    proxy_normalize: str = "softmax"

    def __post_init__(self):
        if self.proxy not in PROXY_KINDS:
            raise ValueError(f"unknown proxy kind '{self.proxy}' (known: {', '.join(PROXY_KINDS)})")
        if self.metric not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind '{self.metric}' (known: {', '.join(METRIC_KINDS)})")
        if self.proxy_normalize not in ("softmax", "none"):
            raise ValueError(f"unknown proxy normalization '{self.proxy_normalize}'")

    def to_dict(self) -> dict:
        return {"backbone": asdict(self.backbone), "proxy": self.proxy,
                "metric": self.metric, "proxy_normalize": self.proxy_normalize}

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(backbone=BackboneConfig(**payload["backbone"]), proxy=payload["proxy"],
                   metric=payload["metric"], proxy_normalize=payload["proxy_normalize"])


class ProxyNetModel(nn.Module):
    """Episode classifier: embeds images, forms class proxies, scores queries."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = build_backbone(config.backbone)
        channels, height, width = feature_shape(self.backbone, IMAGE_SIZE)
        self.feature_size = (channels, height, width)
        self.proxy = build_proxy(config.proxy, channels, config.proxy_normalize)
        self.metric = build_metric(config.metric, channels, (height, width))
        self.stack_order = STACK_ORDER

    def embed_episode(self, support_x: torch.Tensor, query_x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Embed support and query images in one batch through the shared backbone."""
        features = self.backbone(torch.cat([support_x, query_x], dim=0))
        return features[: support_x.shape[0]], features[support_x.shape[0]:]

    def forward(self, support_x: torch.Tensor, support_y: torch.Tensor,
                query_x: torch.Tensor, n_way: int) -> torch.Tensor:
        """Per-query class logits (queries x n_way) for one episode."""
        support_f, query_f = self.embed_episode(support_x, query_x)
        proxies, _ = compute_proxies(self.proxy, support_f, support_y, n_way)
        return self.metric(query_f, proxies)

    def episode_proxies(self, support_x: torch.Tensor, support_y: torch.Tensor,
                        n_way: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Class proxies and per-example weights for one episode's support set."""
        return compute_proxies(self.proxy, self.backbone(support_x), support_y, n_way)


def build_model(config: ModelConfig) -> ProxyNetModel:
    return ProxyNetModel(config)


def save_checkpoint(path: str | Path, model: ProxyNetModel, extra: dict | None = None) -> None:
    """Write the bundle archive: parameters, build config, stacking order."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "stack_order": model.stack_order,
        "state": model.state_dict(),
    }
    if extra:
        payload["trainer"] = extra
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path,
                    expected: ModelConfig | None = None) -> tuple[ProxyNetModel, dict]:
    """Rebuild a model from an archive; validates config equality when expected is given."""
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    config = ModelConfig.from_dict(payload["config"])
    if expected is not None and config != expected:
        raise CheckpointMismatchError(
            f"checkpoint was built with {config}, requested {expected}")
    if payload.get("stack_order", STACK_ORDER) != STACK_ORDER:
        raise CheckpointMismatchError(
            f"checkpoint records pair stacking order '{payload.get('stack_order')}', "
            f"this build uses '{STACK_ORDER}'")
    model = build_model(config)
    model.load_state_dict(payload["state"])
    return model, payload
