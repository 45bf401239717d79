"""
Boundary Enhanced Module.

Fixed Sobel kernels turn the stride-4 and stride-32 pyramid levels into
gradient maps that gate the features; the two levels are fused into one
boundary feature and read out as a 1-channel boundary logit map at stride 4. The CBM
ablation keeps the architecture but has no Sobel layer.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ShapeError
from .layers import ConvBNReLU, resize_to

logger = logging.getLogger("cto_seg.bem")

SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))
SOBEL_Y = ((-1.0, -2.0, -1.0), (0.0, 0.0, 0.0), (1.0, 2.0, 1.0))


@dataclass
class BoundaryFeature:
    feature: torch.Tensor
    logits: torch.Tensor


class SobelOperator(nn.Module):
    """
    Depthwise horizontal/vertical Sobel filtering with stride 1.

    The kernels are registered buffers: they travel with the state dict and
    device moves but are never handed to an optimizer. Borders are padded by
    edge replication, not zeros, so a constant map has zero gradient
    everywhere, border pixels included.

    Args:
        min_size: Smallest accepted height/width
    """

    def __init__(self, min_size: int = 3):
        super().__init__()
        self.min_size = min_size
        self.register_buffer("kx", torch.tensor(SOBEL_X))
        self.register_buffer("ky", torch.tensor(SOBEL_Y))

    def forward(self, f: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if f.dim() != 4:
            raise ShapeError(f"Expected a (B, C, H, W) map, got shape {tuple(f.shape)}")
        h, w = f.shape[-2:]
        if h < self.min_size or w < self.min_size:
            raise ShapeError(
                f"Sobel needs maps of at least {self.min_size}x{self.min_size}, got {h}x{w}"
            )
        channels = f.shape[1]
        padded = F.pad(f, (1, 1, 1, 1), mode="replicate")
        kx = self.kx.to(f.dtype).expand(channels, 1, 3, 3)
        ky = self.ky.to(f.dtype).expand(channels, 1, 3, 3)
        mx = F.conv2d(padded, kx, groups=channels)
        my = F.conv2d(padded, ky, groups=channels)
        return mx, my


def sobel_gradients(f: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    return SobelOperator().to(f.device)(f)


class EdgeEnhance(nn.Module):
    """
    Gate a feature map by its own gradient maps: f * sigmoid(conv1x1([mx, my])).

    The 1x1 projection maps the 2C concatenation back to C channels and is
    zero-initialised, so the gate starts at 0.5.
    """

    def __init__(self, channels: int, sobel_min_size: int = 1):
        super().__init__()
        self.sobel = SobelOperator(min_size=sobel_min_size)
        self.project = nn.Conv2d(2 * channels, channels, 1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)

    def gate(self, f: torch.Tensor) -> torch.Tensor:
        mx, my = self.sobel(f)
        return torch.sigmoid(self.project(torch.cat([mx, my], dim=1)))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return f * self.gate(f)


class PlainEnhance(nn.Module):
    """CBM counterpart of EdgeEnhance: same projection, no Sobel and no sigmoid gate.

    Computes f + conv1x1([f, f]); with the zero-initialised projection the
    features pass straight to fusion.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.project = nn.Conv2d(2 * channels, channels, 1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return f + self.project(torch.cat([f, f], dim=1))


def edge_enhance(f: torch.Tensor, module: EdgeEnhance) -> torch.Tensor:
    return module(f)


class BoundaryModule(nn.Module):
    """
    Two-level boundary fusion shared by BEM and CBM.

    Args:
        low_channels: Channels of the stride-4 level f1
        high_channels: Channels of the stride-32 level f4
        channels: Width F of the fused boundary feature
        use_sobel: True for BEM, False for the CBM ablation
    """

    def __init__(
        self, low_channels: int, high_channels: int, channels: int, use_sobel: bool = True
    ):
        super().__init__()
        self.use_sobel = use_sobel
        if use_sobel:
            self.enhance_low: nn.Module = EdgeEnhance(low_channels)
            self.enhance_high: nn.Module = EdgeEnhance(high_channels)
        else:
            self.enhance_low = PlainEnhance(low_channels)
            self.enhance_high = PlainEnhance(high_channels)
        self.align_low = nn.Conv2d(low_channels, channels, 1)
        self.align_high = nn.Conv2d(high_channels, channels, 1)
        self.fuse = nn.Sequential(
            ConvBNReLU(2 * channels, channels),
            ConvBNReLU(channels, channels),
        )
        self.head = nn.Conv2d(channels, 1, 1)

    @property
    def out_channels(self) -> int:
        return self.head.in_channels

    def forward(self, f1: torch.Tensor, f4: torch.Tensor) -> BoundaryFeature:
        h1, w1 = f1.shape[-2:]
        h4, w4 = f4.shape[-2:]
        if h4 * 8 != h1 or w4 * 8 != w1:
            raise ShapeError(
                f"f4 ({h4}x{w4}) must be 1/8 of f1 ({h1}x{w1})"
            )
        low = self.align_low(self.enhance_low(f1))
        high = resize_to(self.align_high(self.enhance_high(f4)), low)
        feature = self.fuse(torch.cat([low, high], dim=1))
        return BoundaryFeature(feature=feature, logits=self.head(feature))


def build_boundary_module(
    kind: str, low_channels: int, high_channels: int, channels: int
) -> BoundaryModule:
    """``kind`` is "bem" (Sobel gated) or "cbm" (no Sobel layer)."""
    if kind not in ("bem", "cbm"):
        raise ValueError(f"Unknown boundary module '{kind}'")
    return BoundaryModule(low_channels, high_channels, channels, use_sobel=kind == "bem")


def bem_forward(f1: torch.Tensor, f4: torch.Tensor, module: BoundaryModule) -> BoundaryFeature:
    return module(f1, f4)


cbm_forward = bem_forward
