"""Central finite differences against autograd for sampled parameter entries."""

from typing import Callable, List, Optional, Sequence, Tuple

import torch
from torch import nn

Closure = Callable[[], torch.Tensor]


def sample_entries(
    params: Sequence[Tuple[str, torch.Tensor]], count: int, seed: int = 0
) -> List[Tuple[str, torch.Tensor, int]]:
    """Pick ``count`` random (name, tensor, flat index) triples."""
    generator = torch.Generator().manual_seed(seed)
    entries = []
    for _ in range(count):
        which = int(torch.randint(len(params), (1,), generator=generator))
        name, tensor = params[which]
        index = int(torch.randint(tensor.numel(), (1,), generator=generator))
        entries.append((name, tensor, index))
    return entries


def max_relative_error(
    loss_fn: Closure,
    params: Sequence[Tuple[str, torch.Tensor]],
    count: int = 20,
    h: float = 1e-6,
    seed: int = 0,
    floor: float = 1e-4,
) -> float:
    """
    Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over sampled entries.

    Gradients below ``floor`` are compared in absolute terms.

    ``loss_fn`` must return a scalar and be deterministic (modules in eval mode).
    """
    for _, tensor in params:
        tensor.grad = None
    loss_fn().backward()
    analytic = {id(t): t.grad.detach().clone() for _, t in params}

    worst = 0.0
    with torch.no_grad():
        for _, tensor, index in sample_entries(params, count, seed):
            flat = tensor.view(-1)
            original = flat[index].item()
            flat[index] = original + h
            plus = loss_fn().item()
            flat[index] = original - h
            minus = loss_fn().item()
            flat[index] = original
            numeric = (plus - minus) / (2 * h)
            exact = analytic[id(tensor)].view(-1)[index].item()
            scale = max(abs(exact), abs(numeric), floor)
            worst = max(worst, abs(exact - numeric) / scale)
    return worst


def named_trainable(
    module: nn.Module, prefix: Optional[str] = None
) -> List[Tuple[str, torch.Tensor]]:
    return [
        (name, p)
        for name, p in module.named_parameters()
        if p.requires_grad and (prefix is None or name.startswith(prefix))
    ]
