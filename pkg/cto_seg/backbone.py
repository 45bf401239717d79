"""
Residual convolution stream.

A stem (stride 4) followed by four bottleneck stages producing the feature
pyramid f1..f4 at strides 4, 8, 16 and 32.
"""

import logging
from typing import List, NamedTuple

import torch
from torch import nn

from .config import PYRAMID_STRIDES, BackboneConfig
from .utils import check_image_batch

logger = logging.getLogger("cto_seg.backbone")

EXPANSION = 4
MIN_BOTTLENECK = 4


class FeaturePyramid(NamedTuple):
    """The four encoder maps, finest first."""

    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor

    @property
    def strides(self) -> tuple:
        return PYRAMID_STRIDES


def _bottleneck_width(out_channels: int) -> int:
    return max(out_channels // EXPANSION, MIN_BOTTLENECK)


class Bottleneck(nn.Module):
    """1x1 reduce, 3x3 (strided), 1x1 expand, with a projected shortcut when shapes change."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        mid = _bottleneck_width(out_channels)
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, mid, 1, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
        )
        if in_channels != out_channels or stride != 1:
            self.shortcut: nn.Module = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.body(x) + self.shortcut(x))


class ResidualBackbone(nn.Module):
    """
    Configurable bottleneck-residual encoder.

    Args:
        cfg: Stem width, per-stage widths and per-stage block counts
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.stem = nn.Sequential(
            nn.Conv2d(3, cfg.stem_channels, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(cfg.stem_channels),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        )

        stages: List[nn.Module] = []
        in_channels = cfg.stem_channels
        for index, (out_channels, blocks) in enumerate(
            zip(cfg.stage_channels, cfg.blocks_per_stage)
        ):
            stride = 1 if index == 0 else 2
            layers = [Bottleneck(in_channels, out_channels, stride)]
            layers += [Bottleneck(out_channels, out_channels) for _ in range(blocks - 1)]
            stages.append(nn.Sequential(*layers))
            in_channels = out_channels
        self.stages = nn.ModuleList(stages)
        self._init_weights()

    def _init_weights(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)

    @property
    def channels(self) -> tuple:
        return tuple(self.cfg.stage_channels)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        check_image_batch(x, multiple=32)
        x = self.stem(x)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(*levels)


def backbone_forward(x: torch.Tensor, backbone: ResidualBackbone) -> FeaturePyramid:
    return backbone(x)


def backbone_param_count(cfg: BackboneConfig) -> int:
    """
    Trainable scalar count of ``ResidualBackbone(cfg)``, enumerated from layer shapes.

    Convolutions carry no bias; each BatchNorm contributes weight and bias.
    """
    cfg.validate()

    def bn(c: int) -> int:
        return 2 * c

    def block(cin: int, cout: int, stride: int) -> int:
        mid = _bottleneck_width(cout)
        total = cin * mid + bn(mid) + 9 * mid * mid + bn(mid) + mid * cout + bn(cout)
        if cin != cout or stride != 1:
            total += cin * cout + bn(cout)
        return total

    total = 9 * 3 * cfg.stem_channels + bn(cfg.stem_channels)
    cin = cfg.stem_channels
    for index, (cout, blocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
        total += block(cin, cout, 1 if index == 0 else 2)
        total += (blocks - 1) * block(cout, cout, 1)
        cin = cout
    return total
