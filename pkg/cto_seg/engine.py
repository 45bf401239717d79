"""
Training, evaluation and inference.

``Trainer`` coordinates the optimizer loop with the observability stack
(structured logging, Prometheus metrics, OpenTelemetry spans), each part
enabled or disabled by the run configuration.
"""

import logging
import time
import uuid
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn
from torch.utils.data import DataLoader, Dataset

from .checkpoint import checkpoint_path, load_checkpoint, restore, save_checkpoint
from .config import ExperimentConfig, ModelConfig, TrainConfig, get_config
from .data import collate_samples, image_to_tensor, read_image
from .exceptions import CTOSegError, EmptyDatasetError, NonFiniteLossError, ShapeError
from .logging import TrainingLogger
from .losses import LossBreakdown, total_loss
from .metrics import MetricReport, evaluate_many
from .model import labels_from_logits
from .reports import summarize, write_csv, write_json
from .telemetry import TrainingMetricsCollector
from .tracing import TracingManager

logger = logging.getLogger("cto_seg.engine")


@dataclass
class TrainResult:
    loss_history: List[float] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    epoch: int = 0
    step: int = 0
    last_breakdown: Optional[LossBreakdown] = None


def build_optimizer(model: nn.Module, tc: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad],
        lr=tc.lr,
        betas=tuple(tc.betas),
        eps=tc.eps,
        weight_decay=tc.weight_decay,
    )


class Trainer:
    """
    Adam training loop with per-epoch checkpoints.

    Batch order for epoch ``e`` comes from a generator seeded with
    ``seed + e``, so a run resumed from an epoch checkpoint replays the same
    batches as the uninterrupted run.

    Args:
        model: Model returning SegOutput
        model_config: Architecture recorded in checkpoints
        train_config: Optimizer and loop settings
        config: Observability switches; defaults to the global configuration
        checkpoint_dir: Where epoch checkpoints go; None disables saving
    """

    def __init__(
        self,
        model: nn.Module,
        model_config: ModelConfig,
        train_config: TrainConfig,
        config: Optional[ExperimentConfig] = None,
        checkpoint_dir: "Path | str | None" = None,
        run_id: Optional[str] = None,
    ):
        self.model = model
        self.model_config = model_config
        self.train_config = train_config
        self.config = config or get_config()
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
        self.run_id = run_id or str(uuid.uuid4())
        self.optimizer = build_optimizer(model, train_config)

        self.tracing_manager = (
            TracingManager(self.config) if self.config.is_tracing_enabled() else None
        )
        self.metrics_collector = (
            TrainingMetricsCollector(self.config) if self.config.is_metrics_enabled() else None
        )
        self.training_logger = (
            TrainingLogger(self.config, self.run_id) if self.config.is_logging_enabled() else None
        )

    def _span(self, name: str, **attributes: Any):
        if self.tracing_manager is None:
            return nullcontext()
        return self.tracing_manager.span(name, attributes)

    def _loader(self, dataset: Dataset, epoch: int) -> DataLoader:
        generator = torch.Generator()
        generator.manual_seed(self.train_config.seed + epoch)
        return DataLoader(
            dataset,
            batch_size=self.train_config.batch,
            shuffle=True,
            generator=generator,
            num_workers=self.train_config.workers,
            collate_fn=collate_samples,
        )

    def resume(self, path: "Path | str") -> Tuple[int, int, List[float]]:
        checkpoint = load_checkpoint(path)
        restore(checkpoint, self.model, self.optimizer)
        logger.info(
            "Resumed from checkpoint",
            extra={"checkpoint": str(path), "epoch": checkpoint.epoch, "step": checkpoint.step},
        )
        return checkpoint.epoch, checkpoint.step, list(checkpoint.loss_history)

    def train_step(self, batch: Dict[str, Any], step: int) -> LossBreakdown:
        """
        One forward/backward/update.

        Raises:
            NonFiniteLossError: before the update, naming the offending component
        """
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        out = self.model(batch["images"])
        breakdown = total_loss(
            out, batch["masks"], batch["boundaries"], alpha=self.train_config.alpha
        )
        breakdown.check_finite(step=step)
        breakdown.total.backward()
        self.optimizer.step()
        return breakdown

    def train(
        self,
        dataset: Dataset,
        epochs: Optional[int] = None,
        resume_from: "Path | str | None" = None,
    ) -> TrainResult:
        """
        Run the loop until ``epochs`` (default from the train config) or ``max_steps``.

        Raises:
            EmptyDatasetError: the dataset has no samples
            NonFiniteLossError: a loss component became NaN/Inf
        """
        if len(dataset) == 0:
            raise EmptyDatasetError("Cannot train on an empty dataset")
        epochs = epochs if epochs is not None else self.train_config.epochs
        max_steps = self.train_config.max_steps

        result = TrainResult()
        start_epoch = 0
        if resume_from is not None:
            start_epoch, result.step, result.loss_history = self.resume(resume_from)
            result.epoch = start_epoch

        if self.training_logger:
            self.training_logger.log_run_start(self._model_info())
        if self.metrics_collector:
            self.metrics_collector.record_model(self._model_info())

        for epoch in range(start_epoch, epochs):
            if max_steps is not None and result.step >= max_steps:
                break
            epoch_losses: List[float] = []
            stopped_early = False
            with self._span("train_epoch", epoch=epoch, run_id=self.run_id):
                for batch in self._loader(dataset, epoch):
                    if max_steps is not None and result.step >= max_steps:
                        stopped_early = True
                        break
                    started = time.perf_counter()
                    try:
                        breakdown = self.train_step(batch, result.step)
                    except NonFiniteLossError as e:
                        if self.metrics_collector:
                            self.metrics_collector.record_nonfinite(e.component)
                        if self.training_logger:
                            self.training_logger.log_exception(e, result.step)
                        raise
                    duration = time.perf_counter() - started

                    result.step += 1
                    loss = float(breakdown.total.detach())
                    result.loss_history.append(loss)
                    epoch_losses.append(loss)
                    result.last_breakdown = breakdown
                    if self.training_logger:
                        self.training_logger.log_step(epoch, result.step, breakdown, duration)
                    if self.metrics_collector:
                        self.metrics_collector.record_step(
                            breakdown, len(batch["ids"]), duration
                        )

            completed = bool(epoch_losses) and not stopped_early
            saved = self._end_epoch(epoch, completed, epoch_losses, result)
            if saved is not None:
                result.checkpoints.append(saved)

        return result

    def _end_epoch(
        self, epoch: int, completed: bool, epoch_losses: List[float], result: TrainResult
    ) -> Optional[Path]:
        if completed:
            result.epoch = epoch + 1
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")

        saved = None
        if self.checkpoint_dir is not None and epoch_losses:
            path = (
                checkpoint_path(self.checkpoint_dir, result.epoch)
                if completed
                else self.checkpoint_dir / "last.pt"
            )
            saved = save_checkpoint(
                path,
                self.model,
                self.model_config,
                self.train_config,
                optimizer=self.optimizer,
                epoch=result.epoch,
                step=result.step,
                loss_history=result.loss_history,
            )

        if self.training_logger:
            self.training_logger.log_epoch_end(epoch, mean_loss, str(saved) if saved else None)
        if self.metrics_collector:
            self.metrics_collector.record_epoch(result.epoch)
            textfile = self.config.get("metrics_textfile")
            if textfile is None and self.checkpoint_dir is not None:
                textfile = self.checkpoint_dir / "metrics.prom"
            if textfile is not None:
                self.metrics_collector.write_textfile(textfile)
        return saved

    def close(self) -> None:
        """Flush pending spans."""
        if self.tracing_manager is not None:
            self.tracing_manager.shutdown()

    def _model_info(self) -> Dict[str, Any]:
        describe = getattr(self.model, "describe", None)
        if callable(describe):
            return describe()
        return {"variant": self.model_config.variant}


def predict_labels(model: nn.Module, images: torch.Tensor, classes: int = 1) -> torch.Tensor:
    return labels_from_logits(model(images).final, classes)


def _model_classes(model: nn.Module) -> int:
    cfg = getattr(model, "cfg", None)
    return getattr(cfg, "classes", 1)


def evaluate(
    model: nn.Module,
    dataset: Dataset,
    out_dir: "Path | str | None" = None,
    batch: int = 4,
    workers: int = 0,
    config: Optional[ExperimentConfig] = None,
) -> Tuple[Dict[str, Any], List[MetricReport]]:
    """
    Score ``model`` on every sample; writes metrics.json and per_image.csv when ``out_dir`` is set.

    Raises:
        EmptyDatasetError: no samples (nothing is written)
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("Evaluation split is empty")
    config = config or get_config()
    tracing = TracingManager(config) if config.is_tracing_enabled() else None
    classes = _model_classes(model)

    span = tracing.span("evaluate", {"images": len(dataset)}) if tracing else nullcontext()
    try:
        with span:
            model.eval()
            items: List[Tuple[str, np.ndarray, np.ndarray]] = []
            loader = DataLoader(
                dataset, batch_size=batch, shuffle=False, collate_fn=collate_samples
            )
            with torch.no_grad():
                for chunk in loader:
                    preds = predict_labels(model, chunk["images"], classes).cpu().numpy()
                    masks = chunk["masks"].numpy()
                    items.extend(zip(chunk["ids"], preds, masks))

            reports = evaluate_many(items, classes=classes, workers=workers)
            summary = summarize(reports)
    finally:
        if tracing:
            tracing.shutdown()

    if out_dir is not None:
        out_dir = Path(out_dir)
        write_json(summary, reports, out_dir / "metrics.json")
        write_csv(reports, out_dir / "per_image.csv")

    if config.is_logging_enabled():
        TrainingLogger(config, run_id=str(uuid.uuid4())).log_evaluation(summary)
    if config.is_metrics_enabled():
        collector = TrainingMetricsCollector(config)
        collector.record_evaluation(summary)
        if out_dir is not None:
            collector.write_textfile(Path(out_dir) / "metrics.prom")
    return summary, reports


@dataclass
class InferResult:
    mask: Path
    boundary: Optional[Path] = None
    overlay: Optional[Path] = None


def _save_overlay(image: Image.Image, mask: np.ndarray, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(image.width / 100, image.height / 100), dpi=100)
    try:
        ax.imshow(np.asarray(image))
        if mask.any() and not mask.all():
            ax.contour(mask > 0, levels=[0.5], colors="lime", linewidths=1.0)
        ax.set_axis_off()
        fig.subplots_adjust(left=0, right=1, top=1, bottom=0)
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)
    return path


def infer(
    model: nn.Module,
    image_path: "Path | str",
    out_path: "Path | str",
    size: int = 256,
    boundary: bool = False,
    overlay: bool = False,
    config: Optional[ExperimentConfig] = None,
) -> InferResult:
    """
    Segment one image; the mask PNG uses the dataset label encoding at the input's size.

    Raises:
        UnreadableFileError: the image cannot be decoded
        ShapeError: ``size`` is not a multiple of 32
        CTOSegError: boundary output requested from a model without a boundary head
    """
    if size % 32 != 0:
        raise ShapeError(f"Inference size must be divisible by 32, got {size}")
    if boundary and not getattr(model, "has_boundary_head", False):
        raise CTOSegError("This model variant has no boundary head")
    image_path = Path(image_path)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    config = config or get_config()
    tracing = TracingManager(config) if config.is_tracing_enabled() else None
    span = (
        tracing.span("infer", {"image": str(image_path), "size": size})
        if tracing
        else nullcontext()
    )
    try:
        with span:
            result = _segment(model, image_path, out_path, size, boundary, overlay)
    finally:
        if tracing:
            tracing.shutdown()

    logger.info(
        "Inference completed",
        extra={"image": str(image_path), "mask": str(out_path), "size": size},
    )
    return result


def _segment(
    model: nn.Module,
    image_path: Path,
    out_path: Path,
    size: int,
    boundary: bool,
    overlay: bool,
) -> InferResult:
    image = read_image(image_path)
    original = (image.height, image.width)
    x = image_to_tensor(image.resize((size, size), Image.Resampling.BILINEAR)).unsqueeze(0)

    model.eval()
    with torch.no_grad():
        out = model(x)
    classes = _model_classes(model)
    labels = labels_from_logits(out.final, classes)

    mask = labels[0].cpu().numpy().astype(np.uint8)
    mask_image = Image.fromarray(mask)
    if mask.shape != original:
        mask_image = mask_image.resize((original[1], original[0]), Image.Resampling.NEAREST)
    mask_image.save(out_path)
    result = InferResult(mask=out_path)

    if boundary:
        probs = torch.sigmoid(
            F.interpolate(out.boundary_logits, size=original, mode="bilinear", align_corners=False)
        )
        boundary_png = (probs[0, 0].cpu().numpy() * 255.0).round().astype(np.uint8)
        result.boundary = out_path.with_name(f"{out_path.stem}_boundary.png")
        Image.fromarray(boundary_png).save(result.boundary)

    if overlay:
        result.overlay = _save_overlay(
            image,
            np.asarray(mask_image),
            out_path.with_name(f"{out_path.stem}_overlay.png"),
        )
    return result
