"""Embedding networks mapping 3x84x84 images to spatial feature maps.

The same network embeds support and query images. Conv layers carry no bias
because each is followed by batch normalization; with width 64 this puts the
Conv-4 trainable-parameter count at exactly 112,832. The final spatial map is
kept (Conv-4: 64x5x5) rather than flattened, since the downstream heads
consume spatial feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ShapeError, UnknownBackboneError

BACKBONE_NAMES = ("conv4", "conv6", "resnet10", "resnet18", "resnet34")

IMAGE_SIZE = 84


@dataclass(frozen=True)
class BackboneConfig:
    name: str = "conv4"
    width: int = 64

    def __post_init__(self):
        if self.name not in BACKBONE_NAMES:
            raise UnknownBackboneError(self.name, BACKBONE_NAMES)
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")


def _conv_block(in_ch: int, out_ch: int, pool: bool) -> nn.Sequential:
    layers = [
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    ]
    if pool:
        layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


class ConvNet(nn.Module):
    """Stack of 3x3 conv blocks; the first `pooled` blocks halve resolution."""

    def __init__(self, width: int, n_blocks: int, pooled: int = 4):
        super().__init__()
        blocks = []
        in_ch = 3
        for i in range(n_blocks):
            blocks.append(_conv_block(in_ch, width, pool=i < pooled))
            in_ch = width
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = width

    def forward(self, x):
        return self.blocks(x)


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ResNet(nn.Module):
    """ResNet adapted to 84x84 inputs: 3x3 stem, stride 1, no stem pooling."""

    def __init__(self, width: int, block_counts: tuple[int, int, int, int]):
        super().__init__()
        self.stem = _conv_block(3, width, pool=False)
        stages = []
        in_ch = width
        for stage_idx, n_blocks in enumerate(block_counts):
            out_ch = width * (2 ** stage_idx)
            stride = 1 if stage_idx == 0 else 2
            blocks = [BasicBlock(in_ch, out_ch, stride)]
            blocks += [BasicBlock(out_ch, out_ch, 1) for _ in range(n_blocks - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = out_ch
        self.stages = nn.Sequential(*stages)
        self.out_channels = in_ch

    def forward(self, x):
        return self.stages(self.stem(x))


_RESNET_BLOCKS = {
    "resnet10": (1, 1, 1, 1),
    "resnet18": (2, 2, 2, 2),
    "resnet34": (3, 4, 6, 3),
}


def build_backbone(config: BackboneConfig) -> nn.Module:
    """Instantiate an embedding network; exposes `.out_channels`."""
    if config.name == "conv4":
        return ConvNet(config.width, n_blocks=4, pooled=4)
    if config.name == "conv6":
        # extra blocks add depth without further pooling, keeping >=5x5 maps
        return ConvNet(config.width, n_blocks=6, pooled=4)
    if config.name in _RESNET_BLOCKS:
        return ResNet(config.width, _RESNET_BLOCKS[config.name])
    raise UnknownBackboneError(config.name, BACKBONE_NAMES)


def feature_shape(model: nn.Module, image_size: int = IMAGE_SIZE) -> tuple[int, int, int]:
    """Output (channels, height, width) for square inputs of the given size."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(torch.zeros(1, 3, image_size, image_size))
    model.train(was_training)
    return tuple(out.shape[1:])


def embed(model: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Embed a batch of preprocessed images into feature maps."""
    if batch.dim() != 4 or batch.shape[1] != 3:
        raise ShapeError(f"expected a Bx3xHxW batch, got shape {tuple(batch.shape)}")
    if batch.shape[2] != IMAGE_SIZE or batch.shape[3] != IMAGE_SIZE:
        raise ShapeError(
            f"expected {IMAGE_SIZE}x{IMAGE_SIZE} inputs, got {batch.shape[2]}x{batch.shape[3]}"
        )
    return model(batch)


def count_parameters(model: nn.Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_breakdown(model: nn.Module) -> dict[str, int]:
    """Trainable-parameter count per direct child module."""
    counts = {name: count_parameters(child) for name, child in model.named_children()}
    direct = sum(p.numel() for p in model.parameters(recurse=False) if p.requires_grad)
    if direct:
        counts["(direct)"] = direct
    return counts
