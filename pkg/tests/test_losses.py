import math

import pytest
import torch

from cto_seg.exceptions import DataError, HeadCountError, NonFiniteLossError, ShapeError
from cto_seg.losses import (
    EPS,
    LossBreakdown,
    boundary_target,
    ce_loss,
    compose_total,
    dice_loss,
    head_targets,
    miou_loss,
    total_loss,
)
from cto_seg.model import SegOutput

PAIR_TARGET = torch.tensor([1.0, 0.0])
PAIR_PRED = torch.tensor([0.5, 0.5])


def test_ce_hand_value():
    assert ce_loss(PAIR_PRED, PAIR_TARGET).item() == pytest.approx(0.6931, abs=1e-4)


def test_ce_constant_half_is_ln2():
    target = (torch.rand(3, 1, 5, 5) > 0.5).float()
    pred = torch.full_like(target, 0.5)
    assert ce_loss(pred, target).item() == pytest.approx(math.log(2), abs=1e-6)


def test_ce_perfect_prediction():
    target = (torch.rand(2, 1, 4, 4) > 0.5).float()
    assert ce_loss(target.clone(), target).item() <= 1e-6


def test_miou_hand_value():
    assert miou_loss(PAIR_PRED, PAIR_TARGET).item() == pytest.approx(2 / 3, abs=1e-6)


def test_dice_hand_value():
    assert dice_loss(PAIR_PRED, PAIR_TARGET).item() == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("fn", [miou_loss, dice_loss])
def test_overlap_losses_perfect_and_disjoint(fn):
    target = torch.zeros(1, 1, 4, 4)
    target[..., :2, :] = 1
    assert fn(target.clone(), target).item() == pytest.approx(0.0, abs=1e-6)
    assert fn(1 - target, target).item() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("fn", [miou_loss, dice_loss])
def test_blank_prediction_on_blank_target_scores_zero(fn):
    blank = torch.zeros(2, 1, 4, 4)
    assert fn(blank, blank).item() == 0.0


@pytest.mark.parametrize("fn", [ce_loss, miou_loss, dice_loss])
def test_shape_mismatch(fn):
    with pytest.raises(ShapeError):
        fn(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 4, 5))


def test_bounds_on_random_inputs():
    for _ in range(50):
        pred = torch.rand(2, 1, 6, 6)
        target = (torch.rand(2, 1, 6, 6) > 0.5).float()
        assert ce_loss(pred, target) >= 0
        assert 0 <= miou_loss(pred, target) <= 1
        assert 0 <= dice_loss(pred, target) <= 1


def test_dice_symmetric_for_binary_maps():
    for _ in range(20):
        a = (torch.rand(1, 1, 6, 6) > 0.5).float()
        b = (torch.rand(1, 1, 6, 6) > 0.5).float()
        assert torch.equal(dice_loss(a, b), dice_loss(b, a))


@pytest.mark.parametrize("fn", [ce_loss, miou_loss, dice_loss])
def test_loss_gradients(fn):
    pred = (0.05 + 0.9 * torch.rand(2, 1, 4, 4, dtype=torch.float64)).requires_grad_()
    target = (torch.rand(2, 1, 4, 4, dtype=torch.float64) > 0.5).double()
    assert torch.autograd.gradcheck(
        lambda p: fn(p, target), (pred,), eps=1e-6, atol=1e-8, rtol=1e-4
    )


def test_compose_total_arithmetic():
    total = compose_total([0.1] * 3, [0.2] * 3, 0.3, alpha=3.0)
    assert total == pytest.approx(1.8)
    assert compose_total([0.1] * 3, [0.2] * 3, None, alpha=3.0) == pytest.approx(0.9)


def _output(mask, boundary=None, heads=3, scale=40.0):
    logits = torch.where(mask > 0, scale, -scale).float().unsqueeze(1)
    boundary_logits = None
    if boundary is not None:
        height, width = mask.shape[-2:]
        low = boundary_target(boundary, torch.zeros(mask.shape[0], 1, height // 4, width // 4))
        boundary_logits = torch.where(low > 0, scale, -scale)
    return SegOutput(
        logits=tuple(logits.clone() for _ in range(heads)),
        boundary_logits=boundary_logits,
    )


@pytest.fixture
def square():
    mask = torch.zeros(2, 16, 16, dtype=torch.long)
    mask[:, 4:12, 4:12] = 1
    boundary = torch.zeros(2, 16, 16, dtype=torch.uint8)
    boundary[:, 4:12, 4] = 1
    boundary[:, 4:12, 11] = 1
    boundary[:, 4, 4:12] = 1
    boundary[:, 11, 4:12] = 1
    return mask, boundary


def test_perfect_heads_give_near_zero_total(square):
    mask, boundary = square
    breakdown = total_loss(_output(mask, boundary), mask, boundary)
    assert breakdown.total.item() <= 3e-6
    assert breakdown.alpha == 3.0


def test_total_is_exact_composition(square):
    mask, boundary = square
    out = SegOutput(
        logits=tuple(torch.randn(2, 1, 16, 16) for _ in range(3)),
        boundary_logits=torch.randn(2, 1, 4, 4),
    )
    breakdown = total_loss(out, mask, boundary, alpha=3.0)

    target = (mask > 0).unsqueeze(1).float()
    ce = [ce_loss(torch.sigmoid(level), target) for level in out.logits]
    miou = [miou_loss(torch.sigmoid(level), target) for level in out.logits]
    probs = torch.sigmoid(out.boundary_logits)
    dice = dice_loss(probs, boundary_target(boundary, probs))
    expected = (ce[0] + miou[0]) + (ce[1] + miou[1]) + (ce[2] + miou[2]) + 3.0 * dice

    assert torch.equal(breakdown.total, expected)
    for got, want in zip(breakdown.ce_per_head, ce):
        assert torch.equal(got, want)
    assert torch.equal(breakdown.boundary_dice, dice)


def test_zero_alpha_drops_boundary_term(square):
    mask, boundary = square
    out = SegOutput(
        logits=tuple(torch.randn(2, 1, 16, 16) for _ in range(3)),
        boundary_logits=torch.randn(2, 1, 4, 4),
    )
    breakdown = total_loss(out, mask, boundary, alpha=0.0)
    interior = compose_total(breakdown.ce_per_head, breakdown.miou_per_head, None, 0.0)
    assert torch.equal(breakdown.total, interior)


def test_without_boundary_head_alpha_is_ignored(square):
    mask, _ = square
    out = SegOutput(logits=tuple(torch.randn(2, 1, 16, 16) for _ in range(3)))
    first = total_loss(out, mask, alpha=3.0)
    second = total_loss(out, mask, alpha=0.0)
    assert first.boundary_dice is None
    assert torch.equal(first.total, second.total)
    assert "boundary_dice" not in first.components()
    assert first.as_dict()["boundary_dice"] is None


def test_head_count_enforced(square):
    mask, boundary = square
    with pytest.raises(HeadCountError, match="Expected 3"):
        total_loss(_output(mask, boundary, heads=2), mask, boundary)


def test_boundary_target_required(square):
    mask, boundary = square
    with pytest.raises(ShapeError, match="boundary target is required"):
        total_loss(_output(mask, boundary), mask)


def test_boundary_target_is_max_pooled():
    boundary = torch.zeros(1, 8, 8, dtype=torch.uint8)
    boundary[0, 5, 2] = 1
    pooled = boundary_target(boundary, torch.zeros(1, 1, 2, 2))
    assert pooled.tolist() == [[[[0.0, 0.0], [1.0, 0.0]]]]


def test_multiclass_heads():
    mask = torch.randint(0, 3, (2, 8, 8))
    out = SegOutput(logits=tuple(torch.randn(2, 3, 8, 8) for _ in range(3)))
    breakdown = total_loss(out, mask)
    assert torch.isfinite(breakdown.total)
    assert all(0 <= m <= 1 for m in breakdown.miou_per_head)
    targets = head_targets(mask, 3)
    assert torch.equal(targets.sum(dim=1), torch.ones(2, 8, 8))


@pytest.mark.parametrize("bad_label", [2, 5, -1])
def test_head_targets_reject_labels_outside_channels(bad_label):
    mask = torch.zeros(1, 4, 4, dtype=torch.long)
    mask[0, 0, :2] = 1
    mask[0, 3, 3] = bad_label
    with pytest.raises(DataError, match=r"0\.\.1 for 2 classes"):
        head_targets(mask, 2)


def test_head_targets_channel_zero_is_background():
    mask = torch.tensor([[[0, 1], [2, 0]]])
    targets = head_targets(mask, 3)
    assert targets[0, 0].tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert targets[0, 2].tolist() == [[0.0, 0.0], [1.0, 0.0]]


def test_binary_targets_accept_any_foreground_value():
    mask = torch.tensor([[[0, 255], [1, 0]]])
    assert head_targets(mask, 1)[0, 0].tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_total_loss_rejects_label_beyond_class_count():
    mask = torch.randint(0, 2, (2, 8, 8))
    mask[1, 4, 4] = 2
    out = SegOutput(logits=tuple(torch.randn(2, 2, 8, 8) for _ in range(3)))
    with pytest.raises(DataError):
        total_loss(out, mask)


def test_breakdown_names_and_finiteness():
    t = torch.tensor
    breakdown = LossBreakdown(
        ce_per_head=(t(0.1), t(0.1), t(0.1)),
        miou_per_head=(t(0.2), t(float("nan")), t(0.2)),
        boundary_dice=t(0.3),
        total=t(float("nan")),
        alpha=3.0,
    )
    assert list(breakdown.components()) == [
        "ce_head1",
        "miou_head1",
        "ce_head2",
        "miou_head2",
        "ce_head3",
        "miou_head3",
        "boundary_dice",
        "total",
    ]
    with pytest.raises(NonFiniteLossError, match="miou_head2") as info:
        breakdown.check_finite(step=7)
    assert info.value.component == "miou_head2"
    assert info.value.step == 7


def test_eps_constant():
    assert EPS == 1e-7
