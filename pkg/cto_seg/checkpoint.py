"""
Single-file checkpoints.

A checkpoint is a ``torch.save`` container::

    {
        "format": "cto-seg-checkpoint",
        "version": 1,
        "model_config": {...},       # ModelConfig as a plain dict
        "train_config": {...},       # TrainConfig as a plain dict
        "state_dict": {name: tensor},
        "optimizer": {...} | None,
        "epoch": int,                # completed epochs
        "step": int,                 # completed optimizer steps
        "loss_history": [float, ...] # total loss per step
    }
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch
from torch import nn

from .config import (
    ModelConfig,
    TrainConfig,
    config_to_dict,
    model_config_from_dict,
    train_config_from_dict,
)
from .exceptions import CheckpointError

logger = logging.getLogger("cto_seg.checkpoint")

CHECKPOINT_FORMAT = "cto-seg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    state_dict: Dict[str, torch.Tensor]
    optimizer: Optional[Dict[str, Any]] = None
    epoch: int = 0
    step: int = 0
    loss_history: List[float] = field(default_factory=list)


def checkpoint_path(directory: "Path | str", epoch: int) -> Path:
    return Path(directory) / f"epoch_{epoch:04d}.pt"


def save_checkpoint(
    path: "Path | str",
    model: nn.Module,
    model_config: ModelConfig,
    train_config: TrainConfig,
    optimizer: Optional[torch.optim.Optimizer] = None,
    epoch: int = 0,
    step: int = 0,
    loss_history: Optional[List[float]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": config_to_dict(model_config),
        "train_config": config_to_dict(train_config),
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "step": step,
        "loss_history": list(loss_history or []),
    }
    torch.save(payload, path)
    logger.info(
        "Checkpoint saved",
        extra={"checkpoint": str(path), "epoch": epoch, "step": step},
    )
    return path


def load_checkpoint(path: "Path | str") -> Checkpoint:
    """
    Read and validate a checkpoint.

    Raises:
        CheckpointError: missing file, unreadable payload, wrong format tag or version
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a cto-seg checkpoint")
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {version} in {path}, expected {CHECKPOINT_VERSION}"
        )

    try:
        return Checkpoint(
            model_config=model_config_from_dict(payload["model_config"]),
            train_config=train_config_from_dict(payload["train_config"]),
            state_dict=payload["state_dict"],
            optimizer=payload.get("optimizer"),
            epoch=int(payload.get("epoch", 0)),
            step=int(payload.get("step", 0)),
            loss_history=[float(v) for v in payload.get("loss_history", [])],
        )
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"Malformed checkpoint {path}: {e}") from e


def restore(
    checkpoint: Checkpoint,
    model: nn.Module,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> None:
    """Load parameters (and optimizer state when both are present) in place."""
    try:
        model.load_state_dict(checkpoint.state_dict)
        if optimizer is not None and checkpoint.optimizer is not None:
            optimizer.load_state_dict(checkpoint.optimizer)
    except (RuntimeError, ValueError, KeyError) as e:
        raise CheckpointError(f"Checkpoint does not match the model: {e}") from e
