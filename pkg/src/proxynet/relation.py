"""Learned distance metric and baseline metrics.

A query map and a class proxy map are stacked on a new depth axis, giving a
channels x 2 x h x w volume per pair. The learned scorer recalibrates the
volume with a squeeze-and-excitation gate, applies two 3D convolution blocks,
collapses to one channel and global-average-pools to a scalar logit. Softmax
over the N per-class logits yields class probabilities.

Each pair is scored independently by the shared network, so the head works
for any N and scores permute exactly when classes permute. Stacking order is
(query, proxy) everywhere; the head is order-aware, so this order is part of
the serialized model contract.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatchError, ZeroVectorError

METRIC_KINDS = ("proxynet3d", "euclidean", "cosine", "fc_relation")

#: depth index of the query slice in a pair stack; proxy at 1.
QUERY_DEPTH = 0

STACK_ORDER = "query,proxy"


def stack_pair(query: torch.Tensor, proxy: torch.Tensor) -> torch.Tensor:
    """Stack one query map and one proxy map (each CxHxW) into Cx2xHxW."""
    if query.shape != proxy.shape:
        raise ShapeMismatchError(f"query/proxy shape mismatch: {tuple(query.shape)} vs {tuple(proxy.shape)}")
    return torch.stack([query, proxy], dim=1)


def stack_pairs(queries: torch.Tensor, proxies: torch.Tensor) -> torch.Tensor:
    """All (query, proxy) pair stacks: (QxCxHxW, NxCxHxW) -> (Q*N)xCx2xHxW.

    Row-major pair order: query 0 against every proxy first, then query 1.
    """
    if queries.shape[1:] != proxies.shape[1:]:
        raise ShapeMismatchError(
            f"query/proxy map shape mismatch: {tuple(queries.shape[1:])} vs {tuple(proxies.shape[1:])}")
    q = queries.unsqueeze(1).expand(-1, proxies.shape[0], -1, -1, -1)
    p = proxies.unsqueeze(0).expand(queries.shape[0], -1, -1, -1, -1)
    stacked = torch.stack([q, p], dim=3)  # QxNxCx2xHxW
    return stacked.reshape(-1, *stacked.shape[2:])


class SqueezeExcite3D(nn.Module):
    """Channel gating: pool over (depth, h, w), bottleneck of ratio r, sigmoid, rescale."""

    def __init__(self, channels: int, ratio: int = 4):
        super().__init__()
        hidden = max(channels // ratio, 1)
        self.squeeze = nn.Linear(channels, hidden)
        self.excite = nn.Linear(hidden, channels)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3, 4))
        return torch.sigmoid(self.excite(F.relu(self.squeeze(pooled))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gates(x)[:, :, None, None, None]


def _conv3d_block(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_channels, out_channels, 3, padding=1, bias=False),
        nn.BatchNorm3d(out_channels),
        nn.ReLU(inplace=True),
    )


class RelationScorer3D(nn.Module):
    """Per-pair scorer: SE gate, two 3D conv blocks, 1x1x1 reduction, GAP."""

    def __init__(self, in_channels: int, widths: tuple[int, int] = (16, 8), se_ratio: int = 4):
        super().__init__()
        self.se = SqueezeExcite3D(in_channels, se_ratio)
        self.blocks = nn.Sequential(
            _conv3d_block(in_channels, widths[0]),
            _conv3d_block(widths[0], widths[1]),
        )
        self.reduce = nn.Conv3d(widths[1], 1, 1)

    def forward(self, stacks: torch.Tensor) -> torch.Tensor:
        """Batch of pair stacks BxCx2xHxW -> B scalar logits."""
        h = self.blocks(self.se(stacks))
        return self.reduce(h).mean(dim=(1, 2, 3, 4))


class Relation3DHead(nn.Module):
    """Learned metric head: logits[q, n] = scorer(stack(query_q, proxy_n))."""

    def __init__(self, in_channels: int, widths: tuple[int, int] = (16, 8), se_ratio: int = 4):
        super().__init__()
        self.scorer = RelationScorer3D(in_channels, widths, se_ratio)

    def forward(self, queries: torch.Tensor, proxies: torch.Tensor) -> torch.Tensor:
        if self.training:
            # one fused batch so batch-norm statistics span the whole episode
            scores = self.scorer(stack_pairs(queries, proxies))
            return scores.reshape(queries.shape[0], proxies.shape[0])
        # in eval mode each class column is scored from its own batch, whose
        # content does not depend on class order; reordering classes therefore
        # permutes columns bitwise instead of perturbing low-order float bits
        columns = [self.scorer(stack_pairs(queries, proxies[n:n + 1]))
                   for n in range(proxies.shape[0])]
        return torch.stack(columns, dim=1)


class EuclideanHead(nn.Module):
    """Negative squared L2 distance on flattened maps."""

    def forward(self, queries: torch.Tensor, proxies: torch.Tensor) -> torch.Tensor:
        if queries.shape[1:] != proxies.shape[1:]:
            raise ShapeMismatchError(
                f"query/proxy map shape mismatch: {tuple(queries.shape[1:])} vs {tuple(proxies.shape[1:])}")
        q = queries.flatten(1)
        p = proxies.flatten(1)
        diff = q[:, None, :] - p[None, :, :]
        return -(diff * diff).sum(dim=-1)


class CosineHead(nn.Module):
    """Cosine similarity on flattened maps; rejects all-zero maps."""

    def forward(self, queries: torch.Tensor, proxies: torch.Tensor) -> torch.Tensor:
        if queries.shape[1:] != proxies.shape[1:]:
            raise ShapeMismatchError(
                f"query/proxy map shape mismatch: {tuple(queries.shape[1:])} vs {tuple(proxies.shape[1:])}")
        q = queries.flatten(1)
        p = proxies.flatten(1)
        for name, mat in (("query", q), ("proxy", p)):
            norms = mat.norm(dim=1)
            if bool((norms == 0).any()):
                raise ZeroVectorError(f"cosine metric undefined for an all-zero {name} map")
        return F.normalize(q, dim=1) @ F.normalize(p, dim=1).t()


class FCRelationHead(nn.Module):
    """Conv + max-pool + fully connected scorer on channel-concatenated pairs."""

    def __init__(self, in_channels: int, spatial: tuple[int, int], hidden: int = 64):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(2 * in_channels, hidden, 3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        self.score = nn.Linear(hidden * (spatial[0] // 2) * (spatial[1] // 2), 1)

    def forward(self, queries: torch.Tensor, proxies: torch.Tensor) -> torch.Tensor:
        if queries.shape[1:] != proxies.shape[1:]:
            raise ShapeMismatchError(
                f"query/proxy map shape mismatch: {tuple(queries.shape[1:])} vs {tuple(proxies.shape[1:])}")
        n_q, n_p = queries.shape[0], proxies.shape[0]
        q = queries.unsqueeze(1).expand(-1, n_p, -1, -1, -1)
        p = proxies.unsqueeze(0).expand(n_q, -1, -1, -1, -1)
        pairs = torch.cat([q, p], dim=2).reshape(n_q * n_p, -1, *queries.shape[2:])
        h = self.features(pairs).flatten(1)
        return self.score(h).reshape(n_q, n_p)


def build_metric(kind: str, in_channels: int, spatial: tuple[int, int]) -> nn.Module:
    if kind == "proxynet3d":
        return Relation3DHead(in_channels)
    if kind == "euclidean":
        return EuclideanHead()
    if kind == "cosine":
        return CosineHead()
    if kind == "fc_relation":
        return FCRelationHead(in_channels, spatial)
    raise ValueError(f"unknown metric kind '{kind}' (known: {', '.join(METRIC_KINDS)})")


def classify(logits: torch.Tensor) -> torch.Tensor:
    """Per-query class probabilities from relation logits (softmax over classes)."""
    return F.softmax(logits, dim=-1)


def episode_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over queries of -log p(true class), computed in the log domain."""
    if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeMismatchError(f"labels shape {tuple(labels.shape)} does not match logits {tuple(logits.shape)}")
    return F.cross_entropy(logits, labels)
