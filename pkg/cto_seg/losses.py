"""
Composite training objective.

Every interior head contributes cross-entropy plus soft-mIoU; the boundary
head contributes a Dice term weighted by ``alpha``:

    total = sum_heads(ce + miou) + alpha * boundary_dice
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from .exceptions import HeadCountError, NonFiniteLossError, ShapeError
from .utils import check_label_range, check_same_shape

EPS = 1e-7
INTERIOR_HEADS = 3

Number = Union[float, torch.Tensor]


def _flatten(x: torch.Tensor) -> torch.Tensor:
    # (B, ...) maps are reduced per sample; anything below 3-D is one sample.
    if x.dim() >= 3:
        return x.reshape(x.shape[0], -1)
    return x.reshape(1, -1)


def ce_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all pixels; ``pred`` is clamped to [EPS, 1 - EPS]."""
    check_same_shape(pred, target, "ce_loss")
    p = pred.clamp(EPS, 1.0 - EPS)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


def miou_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - soft IoU; a blank prediction on a blank target scores 0."""
    check_same_shape(pred, target, "miou_loss")
    p = _flatten(pred)
    t = _flatten(target.to(pred.dtype))
    inter = (p * t).sum(dim=1)
    p_mass = p.sum(dim=1)
    t_mass = t.sum(dim=1)
    union = p_mass + t_mass - inter
    loss = 1.0 - inter / union.clamp_min(EPS)
    blank = (p_mass < EPS) & (t_mass < EPS)
    return torch.where(blank, torch.zeros_like(loss), loss).mean()


def dice_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - 2|P.T| / (|P| + |T|); a blank prediction on a blank target scores 0."""
    check_same_shape(pred, target, "dice_loss")
    p = _flatten(pred)
    t = _flatten(target.to(pred.dtype))
    inter = (p * t).sum(dim=1)
    p_mass = p.sum(dim=1)
    t_mass = t.sum(dim=1)
    loss = 1.0 - 2.0 * inter / (p_mass + t_mass).clamp_min(EPS)
    blank = (p_mass < EPS) & (t_mass < EPS)
    return torch.where(blank, torch.zeros_like(loss), loss).mean()


def compose_total(
    ce: Sequence[Number], miou: Sequence[Number], boundary_dice: Optional[Number], alpha: float
) -> Number:
    """Sum heads in order, then add the weighted boundary term (skipped when absent)."""
    interior: Number = ce[0] + miou[0]
    for ce_i, miou_i in zip(ce[1:], miou[1:]):
        interior = interior + (ce_i + miou_i)
    if boundary_dice is None:
        return interior
    return interior + alpha * boundary_dice


@dataclass
class LossBreakdown:
    ce_per_head: Tuple[torch.Tensor, ...]
    miou_per_head: Tuple[torch.Tensor, ...]
    boundary_dice: Optional[torch.Tensor]
    total: torch.Tensor
    alpha: float

    def components(self) -> Dict[str, torch.Tensor]:
        named: Dict[str, torch.Tensor] = {}
        for index, (ce, miou) in enumerate(zip(self.ce_per_head, self.miou_per_head), start=1):
            named[f"ce_head{index}"] = ce
            named[f"miou_head{index}"] = miou
        if self.boundary_dice is not None:
            named["boundary_dice"] = self.boundary_dice
        named["total"] = self.total
        return named

    def as_dict(self) -> Dict[str, Optional[float]]:
        values: Dict[str, Optional[float]] = {
            name: float(value.detach()) for name, value in self.components().items()
        }
        values.setdefault("boundary_dice", None)
        values["alpha"] = self.alpha
        return values

    def check_finite(self, step: Optional[int] = None) -> None:
        """
        Raises:
            NonFiniteLossError: naming the first NaN/Inf component
        """
        for name, value in self.components().items():
            number = float(value.detach())
            if not math.isfinite(number):
                raise NonFiniteLossError(name, number, step=step)


def head_probabilities(logits: torch.Tensor) -> torch.Tensor:
    """Sigmoid for one channel, softmax over channels otherwise."""
    if logits.shape[1] == 1:
        return torch.sigmoid(logits)
    return torch.softmax(logits, dim=1)


def head_targets(mask: torch.Tensor, classes: int) -> torch.Tensor:
    """
    (B, H, W) label map to (B, K, H, W) float targets.

    K=1 means foreground (any nonzero label) vs background. Otherwise labels
    index the K channels directly and channel 0 is background.

    Raises:
        DataError: a label outside 0..K-1 when K > 1
    """
    if classes == 1:
        return (mask > 0).unsqueeze(1).float()
    check_label_range(mask, classes)
    one_hot = F.one_hot(mask.long(), num_classes=classes)
    return one_hot.permute(0, 3, 1, 2).float()


def _per_class(fn, probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    # One-vs-all, averaged over classes.
    if probs.shape[1] == 1:
        return fn(probs, targets)
    terms = [fn(probs[:, k : k + 1], targets[:, k : k + 1]) for k in range(probs.shape[1])]
    return torch.stack(terms).mean()


def boundary_target(boundary: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Max-pool a full-resolution (B, H, W) boundary map to the spatial size of ``like``."""
    target = boundary.to(like.dtype)
    if target.dim() == 3:
        target = target.unsqueeze(1)
    if target.shape[-2:] != like.shape[-2:]:
        target = F.adaptive_max_pool2d(target, like.shape[-2:])
    return target


def total_loss(
    out,
    mask: torch.Tensor,
    boundary: Optional[torch.Tensor] = None,
    alpha: float = 3.0,
) -> LossBreakdown:
    """
    Evaluate the composite objective on a model output.

    Args:
        out: SegOutput with three interior heads and an optional boundary head
        mask: (B, H, W) integer label map
        boundary: (B, H, W) binary boundary map, required when a boundary head is present
        alpha: Boundary Dice weight; ignored without a boundary head

    Raises:
        HeadCountError: not exactly three interior heads
        ShapeError: prediction/target mismatch or missing boundary target
        DataError: mask labels outside 0..K-1 for a K-channel model
    """
    if len(out.logits) != INTERIOR_HEADS:
        raise HeadCountError(
            f"Expected {INTERIOR_HEADS} interior heads, got {len(out.logits)}"
        )
    classes = out.logits[0].shape[1]
    targets = head_targets(mask, classes).to(out.logits[0].dtype)

    ce_terms, miou_terms = [], []
    for logits in out.logits:
        probs = head_probabilities(logits)
        check_same_shape(probs, targets, "interior head")
        ce_terms.append(_per_class(ce_loss, probs, targets))
        miou_terms.append(_per_class(miou_loss, probs, targets))

    dice_term = None
    if out.boundary_logits is not None:
        if boundary is None:
            raise ShapeError("A boundary target is required when the model has a boundary head")
        probs = torch.sigmoid(out.boundary_logits)
        dice_term = dice_loss(probs, boundary_target(boundary, probs))

    total = compose_total(ce_terms, miou_terms, dice_term, alpha)
    return LossBreakdown(
        ce_per_head=tuple(ce_terms),
        miou_per_head=tuple(miou_terms),
        boundary_dice=dice_term,
        total=total,
        alpha=alpha,
    )
