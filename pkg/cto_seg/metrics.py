"""
Evaluation metrics: Dice, IoU, average Hausdorff distance and Panoptic Quality.

All functions take numpy label maps (any integer or boolean dtype) of the
same shape.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .exceptions import MetricError, ShapeError, UndefinedMetricError
from .utils import check_label_range

logger = logging.getLogger("cto_seg.metrics")

PQ_IOU_THRESHOLD = 0.5


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction shape {pred.shape} != ground truth shape {gt.shape}")


def dice_iou(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    """Set-overlap Dice and IoU of two binary masks; two empty masks score (1, 1)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    _check_pair(pred, gt)
    a = pred.astype(bool)
    b = gt.astype(bool)
    inter = int(np.logical_and(a, b).sum())
    size_a = int(a.sum())
    size_b = int(b.sum())
    union = size_a + size_b - inter
    if union == 0:
        return 1.0, 1.0
    return 2.0 * inter / (size_a + size_b), inter / union


def avg_hausdorff(pred: np.ndarray, gt: np.ndarray) -> float:
    """
    Average Hausdorff distance in pixels:
    (mean_a min_b d(a, b) + mean_b min_a d(a, b)) / 2, Euclidean.

    Raises:
        UndefinedMetricError: either mask is empty
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    _check_pair(pred, gt)
    points_a = np.argwhere(pred.astype(bool))
    points_b = np.argwhere(gt.astype(bool))
    if len(points_a) == 0 or len(points_b) == 0:
        raise UndefinedMetricError("Average Hausdorff distance is undefined for an empty mask")
    distances = cdist(points_a, points_b, metric="euclidean")
    return float((distances.min(axis=1).mean() + distances.min(axis=0).mean()) / 2.0)


class PanopticResult(NamedTuple):
    pq: float
    detection_quality: float
    segmentation_quality: float
    empty_convention: bool = False


def _instance_ids(labels: np.ndarray) -> np.ndarray:
    ids = np.unique(labels)
    return ids[ids != 0]


def pairwise_iou(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IoU matrix (n_pred, n_gt) between instance ids, with the id lists."""
    pred_ids = _instance_ids(pred)
    gt_ids = _instance_ids(gt)
    ious = np.zeros((len(pred_ids), len(gt_ids)), dtype=np.float64)
    for i, pid in enumerate(pred_ids):
        p = pred == pid
        p_size = p.sum()
        for j, gid in enumerate(gt_ids):
            g = gt == gid
            inter = np.logical_and(p, g).sum()
            if inter:
                ious[i, j] = inter / (p_size + g.sum() - inter)
    return ious, pred_ids, gt_ids


def panoptic_quality(pred: np.ndarray, gt: np.ndarray) -> PanopticResult:
    """
    Panoptic Quality of two instance maps (0 = background).

    Pairs with IoU > 0.5 are matches; PQ = sum(matched IoU) / (TP + FP/2 + FN/2).
    Two maps without instances score 1 with ``empty_convention`` set.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    _check_pair(pred, gt)
    ious, pred_ids, gt_ids = pairwise_iou(pred, gt)
    if len(pred_ids) == 0 and len(gt_ids) == 0:
        return PanopticResult(1.0, 1.0, 1.0, empty_convention=True)

    matched = ious > PQ_IOU_THRESHOLD
    # Above 0.5 IoU a match is unique in both directions.
    if (matched.sum(axis=0) > 1).any() or (matched.sum(axis=1) > 1).any():
        raise MetricError("An instance matched more than one counterpart at IoU > 0.5")

    tp = int(matched.sum())
    fp = len(pred_ids) - tp
    fn = len(gt_ids) - tp
    iou_sum = float(ious[matched].sum())
    denominator = tp + 0.5 * fp + 0.5 * fn
    dq = tp / denominator
    sq = iou_sum / tp if tp else 0.0
    return PanopticResult(iou_sum / denominator, dq, sq)


def instances_from_semantic(labels: np.ndarray) -> np.ndarray:
    """4-connected components of the foreground (label > 0), numbered from 1."""
    instances, _ = ndimage.label(np.asarray(labels) > 0)
    return instances


@dataclass
class MetricReport:
    image_id: str
    dice: float
    iou: float
    hd: Optional[float] = None
    pq: Optional[float] = None
    pq_empty_convention: bool = False

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def evaluate_pair(
    image_id: str, pred: np.ndarray, gt: np.ndarray, classes: int = 1
) -> MetricReport:
    """
    Score one prediction against its ground truth label map.

    With ``classes`` > 1 labels are 0..classes-1 (0 = background) and Dice/IoU
    average over the foreground classes present in either map. HD and PQ run
    on the foreground (label > 0) map. An undefined HD is reported as missing.

    Raises:
        DataError: a label outside 0..classes-1 when ``classes`` > 1
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    _check_pair(pred, gt)

    if classes <= 1:
        dice, iou = dice_iou(pred > 0, gt > 0)
    else:
        check_label_range(gt, classes, "ground truth")
        check_label_range(pred, classes, "prediction")
        present = [k for k in range(1, classes) if (pred == k).any() or (gt == k).any()]
        if present:
            scores = [dice_iou(pred == k, gt == k) for k in present]
            dice = float(np.mean([s[0] for s in scores]))
            iou = float(np.mean([s[1] for s in scores]))
        else:
            dice, iou = 1.0, 1.0

    try:
        hd: Optional[float] = avg_hausdorff(pred > 0, gt > 0)
    except UndefinedMetricError:
        logger.debug(f"Hausdorff distance undefined for {image_id}")
        hd = None

    pq = panoptic_quality(instances_from_semantic(pred), instances_from_semantic(gt))
    return MetricReport(
        image_id=image_id,
        dice=dice,
        iou=iou,
        hd=hd,
        pq=pq.pq,
        pq_empty_convention=pq.empty_convention,
    )


def evaluate_many(
    items: Iterable[Tuple[str, np.ndarray, np.ndarray]],
    classes: int = 1,
    workers: int = 0,
) -> List[MetricReport]:
    """Score (image_id, pred, gt) triples; results keep input order for any ``workers``."""
    items = list(items)

    def score(item: Tuple[str, np.ndarray, np.ndarray]) -> MetricReport:
        return evaluate_pair(item[0], item[1], item[2], classes=classes)

    if workers <= 1:
        return [score(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(score, items))


def mean_of(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))
