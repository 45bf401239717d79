import logging
import random
from typing import Sequence, Union

import numpy as np
import torch
from torch import nn

from .exceptions import DataError, ShapeError

logger = logging.getLogger("cto_seg.utils")


def seed_everything(seed: int) -> torch.Generator:
    """
    Seed python, numpy and torch and turn on deterministic kernels.

    Returns:
        A torch generator seeded with ``seed`` for data ordering
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    generator = torch.Generator()
    generator.manual_seed(seed)
    logger.debug(f"Seeded all generators with {seed}")
    return generator


def resolve_device(name: str = "auto") -> torch.device:
    """Pick a torch device; ``auto`` prefers CUDA, then CPU."""
    if name != "auto":
        return torch.device(name)
    if torch.cuda.is_available():
        return torch.device("cuda")
    return torch.device("cpu")


def count_parameters(module: nn.Module, trainable_only: bool = True) -> int:
    """Number of scalar parameters (optionally only those that require grad)."""
    return sum(
        p.numel() for p in module.parameters() if p.requires_grad or not trainable_only
    )


def count_buffers(module: nn.Module) -> int:
    """Number of scalars held in registered buffers (fixed, non-optimized state)."""
    return sum(b.numel() for b in module.buffers())


def check_image_batch(x: torch.Tensor, multiple: int = 32) -> None:
    """
    Validate a (B, 3, H, W) image batch.

    Raises:
        ShapeError: wrong rank, channel count, or H/W not divisible by ``multiple``
    """
    if x.dim() != 4:
        raise ShapeError(f"Expected a (B, 3, H, W) batch, got shape {tuple(x.shape)}")
    if x.shape[1] != 3:
        raise ShapeError(f"Expected 3 input channels, got {x.shape[1]}")
    height, width = x.shape[-2:]
    if height % multiple or width % multiple:
        raise ShapeError(
            f"Input height and width must be divisible by {multiple}, got {height}x{width}"
        )


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def spatial_size(x: torch.Tensor) -> Sequence[int]:
    return tuple(x.shape[-2:])


def check_label_range(
    labels: Union[np.ndarray, torch.Tensor], classes: int, what: str = "mask"
) -> None:
    """
    Multi-class label maps must hold 0..classes-1, channel 0 being background.

    With ``classes == 1`` the map is binary and any nonzero label is foreground,
    so nothing is checked.

    Raises:
        DataError: a label is negative or >= ``classes``
    """
    if classes <= 1 or len(labels.reshape(-1)) == 0:
        return
    low, high = int(labels.min()), int(labels.max())
    if low < 0 or high >= classes:
        raise DataError(
            f"{what} labels must lie in 0..{classes - 1} for {classes} classes, "
            f"found {low}..{high}"
        )
