"""
Boundary Inject Module and the deep-supervised decoder.

The decoder walks strides 32 -> 16 -> 8 -> 4 with three stages fed by the
skips f3, f2, f1. In the full model each stage is a BIM with a
foreground path (boundary feature + skip + previous decoder feature) and a
background-attention path; ablations use a plain concat-conv block. Every
stage has its own 1x1 prediction head.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ShapeError
from .layers import ConvBNReLU, resize_to

STAGES = 3


@dataclass
class DecoderState:
    """Decoder features and raw (not upsampled) logits per stage, coarse to fine."""

    features: Tuple[torch.Tensor, ...]
    logits: Tuple[torch.Tensor, ...]


class BoundaryInjectBlock(nn.Module):
    """
    Dual-path decoder stage.

    Foreground: two Conv-BN-ReLU over [boundary, skip, previous]. Background:
    three Conv-BN-ReLU over (1 - sigmoid(a)) * skip where a is a 1-channel
    attention logit read from the upsampled previous decoder feature. The
    output fuses [foreground, background, previous].
    """

    def __init__(
        self, boundary_channels: int, skip_channels: int, prev_channels: int, out_channels: int
    ):
        super().__init__()
        self.foreground = nn.Sequential(
            ConvBNReLU(boundary_channels + skip_channels + prev_channels, out_channels),
            ConvBNReLU(out_channels, out_channels),
        )
        self.attention = nn.Conv2d(prev_channels, 1, 1)
        self.background = nn.Sequential(
            ConvBNReLU(skip_channels, out_channels),
            ConvBNReLU(out_channels, out_channels),
            ConvBNReLU(out_channels, out_channels),
        )
        self.fuse = ConvBNReLU(2 * out_channels + prev_channels, out_channels)

    def background_gate(self, fd_up: torch.Tensor) -> torch.Tensor:
        return 1.0 - torch.sigmoid(self.attention(fd_up))

    def forward(
        self, fb: torch.Tensor, fc: torch.Tensor, fd_prev: torch.Tensor
    ) -> torch.Tensor:
        fb = resize_to(fb, fc)
        fd_up = resize_to(fd_prev, fc)
        fg = self.foreground(torch.cat([fb, fc, fd_up], dim=1))
        bg = self.background(self.background_gate(fd_up) * fc)
        return self.fuse(torch.cat([fg, bg, fd_up], dim=1))


class PlainDecoderBlock(nn.Module):
    """Ablation stage: two Conv-BN-ReLU over [skip, upsampled previous]."""

    def __init__(self, skip_channels: int, prev_channels: int, out_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            ConvBNReLU(skip_channels + prev_channels, out_channels),
            ConvBNReLU(out_channels, out_channels),
        )

    def forward(self, fc: torch.Tensor, fd_prev: torch.Tensor) -> torch.Tensor:
        return self.body(torch.cat([fc, resize_to(fd_prev, fc)], dim=1))


def bim_forward(
    fb: torch.Tensor, fc: torch.Tensor, fd_prev: torch.Tensor, block: BoundaryInjectBlock
) -> torch.Tensor:
    return block(fb, fc, fd_prev)


class Decoder(nn.Module):
    """
    Bottleneck plus three stages and three heads.

    Args:
        stage_channels: Encoder widths (c1, c2, c3, c4)
        channels: Decoder width D
        classes: Output channels K of every head
        vit_channels: LightViT output width, or None without a transformer stream
        boundary_channels: Boundary feature width for BIM stages, or None for plain stages
    """

    def __init__(
        self,
        stage_channels: Sequence[int],
        channels: int,
        classes: int,
        vit_channels: Optional[int] = None,
        boundary_channels: Optional[int] = None,
    ):
        super().__init__()
        c1, c2, c3, c4 = stage_channels
        self.uses_vit = vit_channels is not None
        self.uses_bim = boundary_channels is not None
        self.bottleneck = ConvBNReLU(c4 + (vit_channels or 0), channels)

        skips = (c3, c2, c1)
        if self.uses_bim:
            self.stages = nn.ModuleList(
                BoundaryInjectBlock(boundary_channels, skip, channels, channels)
                for skip in skips
            )
        else:
            self.stages = nn.ModuleList(
                PlainDecoderBlock(skip, channels, channels) for skip in skips
            )
        self.heads = nn.ModuleList(nn.Conv2d(channels, classes, 1) for _ in skips)

    def forward(
        self,
        pyramid: Sequence[torch.Tensor],
        vit_out: Optional[torch.Tensor] = None,
        boundary_feature: Optional[torch.Tensor] = None,
    ) -> DecoderState:
        f1, f2, f3, f4 = pyramid
        bottom = f4
        if self.uses_vit:
            if vit_out is None:
                raise ShapeError("Decoder built with a transformer stream needs vit_out")
            bottom = torch.cat([f4, F.adaptive_avg_pool2d(vit_out, f4.shape[-2:])], dim=1)
        if self.uses_bim and boundary_feature is None:
            raise ShapeError("Decoder built with boundary injection needs a boundary feature")

        fd = self.bottleneck(bottom)
        features, logits = [], []
        for stage, head, skip in zip(self.stages, self.heads, (f3, f2, f1)):
            if self.uses_bim:
                fd = stage(boundary_feature, skip, fd)
            else:
                fd = stage(skip, fd)
            features.append(fd)
            logits.append(head(fd))
        return DecoderState(features=tuple(features), logits=tuple(logits))


def decoder_forward(
    pyramid: Sequence[torch.Tensor],
    vit_out: Optional[torch.Tensor],
    boundary_feature: Optional[torch.Tensor],
    decoder: Decoder,
) -> DecoderState:
    return decoder(pyramid, vit_out, boundary_feature)
