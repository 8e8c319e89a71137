"""Class-representative operators.

The learned operator scores each support example against its class sum (an
approximation of the class's global trend) with a small shared network, turns
the K per-class scores into softmax weights and forms the class proxy as the
weighted sum of the support feature maps. Examples far from the class trend
receive small weights, which damps outliers. Mean and sum operators are kept
as ablation baselines.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import GroupingError, ShapeMismatchError

PROXY_KINDS = ("learned", "mean", "sum")


def class_sum(features: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of the K support feature maps of one class (KxCxHxW -> CxHxW)."""
    if features.dim() != 4:
        raise ShapeMismatchError(f"expected KxCxHxW support features, got shape {tuple(features.shape)}")
    return features.sum(dim=0)


def group_support(features: torch.Tensor, labels: torch.Tensor, n_way: int) -> torch.Tensor:
    """Group per-image support features by episode label into NxKxCxHxW.

    Raises GroupingError when per-label counts differ.
    """
    groups = [features[labels == label] for label in range(n_way)]
    counts = [len(g) for g in groups]
    if len(set(counts)) != 1 or counts[0] == 0:
        raise GroupingError(f"unequal support counts per label: {counts}")
    return torch.stack(groups)


class WeightNet(nn.Module):
    """Shared scorer producing one logit per (support example, class sum) pair."""

    def __init__(self, in_channels: int, hidden: int = 32):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(2 * in_channels, hidden, 3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
        )
        self.score = nn.Linear(hidden, 1)

    def forward(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        """Logits for a batch of (example, class-sum) pairs: (BxCxHxW, BxCxHxW) -> B."""
        if x.shape != s.shape:
            raise ShapeMismatchError(f"example/class-sum shape mismatch: {tuple(x.shape)} vs {tuple(s.shape)}")
        h = self.features(torch.cat([x, s], dim=1))
        pooled = h.mean(dim=(2, 3))
        return self.score(pooled).squeeze(-1)


class LearnedProxy(nn.Module):
    """Weighted-sum class representative with learned, softmax-normalized weights."""

    def __init__(self, in_channels: int, hidden: int = 32, normalize: str = "softmax"):
        super().__init__()
        if normalize not in ("softmax", "none"):
            raise ValueError(f"unknown weight normalization '{normalize}'")
        self.weight_net = WeightNet(in_channels, hidden)
        self.normalize = normalize

    def forward(self, support: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """NxKxCxHxW grouped support features -> (proxies NxCxHxW, weights NxK)."""
        n, k = support.shape[0], support.shape[1]
        sums = support.sum(dim=1)  # NxCxHxW
        flat = support.reshape(n * k, *support.shape[2:])
        sums_rep = sums.repeat_interleave(k, dim=0)
        logits = self.weight_net(flat, sums_rep).reshape(n, k)
        if self.normalize == "softmax":
            weights = F.softmax(logits, dim=1)
        else:
            weights = logits
        proxies = (weights[:, :, None, None, None] * support).sum(dim=1)
        return proxies, weights


class MeanProxy(nn.Module):
    """Arithmetic-mean class representative; weights are 1/K each."""

    def forward(self, support: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        n, k = support.shape[0], support.shape[1]
        weights = torch.full((n, k), 1.0 / k, dtype=support.dtype, device=support.device)
        return support.mean(dim=1), weights


class SumProxy(nn.Module):
    """Elementwise-sum class representative; equals K times the mean."""

    def forward(self, support: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        n, k = support.shape[0], support.shape[1]
        weights = torch.ones((n, k), dtype=support.dtype, device=support.device)
        return support.sum(dim=1), weights


def build_proxy(kind: str, in_channels: int, normalize: str = "softmax") -> nn.Module:
    if kind == "learned":
        return LearnedProxy(in_channels, normalize=normalize)
    if kind == "mean":
        return MeanProxy()
    if kind == "sum":
        return SumProxy()
    raise ValueError(f"unknown proxy kind '{kind}' (known: {', '.join(PROXY_KINDS)})")


def compute_proxies(proxy: nn.Module, features: torch.Tensor, labels: torch.Tensor,
                    n_way: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Group ungrouped support features by label and apply a proxy operator."""
    return proxy(group_support(features, labels, n_way))
