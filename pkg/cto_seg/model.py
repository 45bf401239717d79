"""
Model assembly for the five ablation variants.

    cnn           backbone + plain decoder
    cnn+vit       + LightViT at the bottleneck
    cnn+vit+cbm   + boundary supervision through CBM (no Sobel layer)
    cnn+vit+bem   + boundary supervision through BEM
    full          + BIM decoder stages injecting the boundary feature
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import ResidualBackbone
from .bem import BoundaryModule, build_boundary_module
from .bim_decoder import Decoder
from .config import ModelConfig
from .lightvit import LightViT
from .utils import count_buffers, count_parameters

logger = logging.getLogger("cto_seg.model")


@dataclass
class SegOutput:
    """
    Model output.

    Attributes:
        logits: Three interior logit maps (B, K, H, W), coarse stage first
        boundary_logits: BEM/CBM logits (B, 1, H/4, W/4), None for cnn and cnn+vit
    """

    logits: Tuple[torch.Tensor, ...]
    boundary_logits: Optional[torch.Tensor] = None

    @property
    def final(self) -> torch.Tensor:
        return self.logits[-1]


def labels_from_logits(logits: torch.Tensor, classes: int) -> torch.Tensor:
    """(B, H, W) labels: sigmoid >= 0.5 for one class, argmax over channels otherwise."""
    if classes == 1:
        return (torch.sigmoid(logits[:, 0]) >= 0.5).long()
    return logits.argmax(dim=1)


class CTOSegmenter(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        channels = cfg.backbone.stage_channels
        self.backbone = ResidualBackbone(cfg.backbone)
        self.lightvit: Optional[LightViT] = (
            LightViT(channels[0], cfg) if cfg.uses_vit else None
        )
        kind = cfg.boundary_module
        self.boundary: Optional[BoundaryModule] = (
            build_boundary_module(kind, channels[0], channels[3], cfg.boundary_channels)
            if kind is not None
            else None
        )
        self.decoder = Decoder(
            channels,
            cfg.decoder_channels,
            cfg.classes,
            vit_channels=cfg.vit_channels if cfg.uses_vit else None,
            boundary_channels=cfg.boundary_channels if cfg.uses_bim else None,
        )

    @property
    def variant(self) -> str:
        return self.cfg.variant

    @property
    def has_boundary_head(self) -> bool:
        return self.boundary is not None

    def forward(self, x: torch.Tensor) -> SegOutput:
        pyramid = self.backbone(x)
        vit_out = self.lightvit(pyramid.f1) if self.lightvit is not None else None
        bfeat = self.boundary(pyramid.f1, pyramid.f4) if self.boundary is not None else None
        state = self.decoder(
            pyramid,
            vit_out,
            bfeat.feature if (bfeat is not None and self.cfg.uses_bim) else None,
        )
        size = x.shape[-2:]
        logits = tuple(
            F.interpolate(level, size=size, mode="bilinear", align_corners=False)
            for level in state.logits
        )
        return SegOutput(
            logits=logits, boundary_logits=bfeat.logits if bfeat is not None else None
        )

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        return labels_from_logits(self(x).final, self.cfg.classes)

    def describe(self) -> Dict[str, Any]:
        return {
            "variant": self.cfg.variant,
            "trainable_parameters": count_parameters(self),
            "fixed_scalars": count_buffers(self),
            "classes": self.cfg.classes,
        }


def build_model(cfg: ModelConfig) -> CTOSegmenter:
    """
    Construct the model for ``cfg.variant``.

    Raises:
        ConfigurationError: unknown variant or invalid widths
    """
    model = CTOSegmenter(cfg)
    logger.info("Model built", extra={"model": model.describe()})
    return model
