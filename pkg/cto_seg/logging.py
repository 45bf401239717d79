"""
JSON log lines for training runs.

``TrainingLogger`` emits one event per optimizer step, epoch end, evaluation
and failure; ``configure_logging`` decides whether they render as JSON or text.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Mapping, Optional

from .config import ExperimentConfig

if TYPE_CHECKING:
    from .losses import LossBreakdown

# Attributes every LogRecord carries; anything else came in through ``extra``.
_RESERVED_ATTRS = frozenset(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {
    "message",
    "asctime",
    "taskName",
}


def _jsonable(value: Any) -> Any:
    # Scalar tensors and numpy numbers become plain floats/ints.
    item = getattr(value, "item", None)
    if callable(item) and getattr(value, "ndim", None) == 0:
        return item()
    if isinstance(value, Path):
        return str(value)
    return value


class JSONFormatter(logging.Formatter):
    """
    JSON formatter for structured logging.

    Converts log records to one JSON object per line with a consistent set of
    fields; anything passed through ``extra`` lands under ``"extra"``.
    """

    def format(self, record: logging.LogRecord) -> str:
        log_entry: Dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(
                record.created, tz=timezone.utc
            ).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if getattr(record, "process", None):
            log_entry["process_id"] = record.process

        if record.exc_info:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": (
                    self.formatException(record.exc_info)
                    if record.exc_info[2] is not None
                    else None
                ),
            }

        extra = {
            key: _jsonable(value)
            for key, value in record.__dict__.items()
            if key not in _RESERVED_ATTRS and not key.startswith("_")
        }
        if extra:
            log_entry["extra"] = extra
        return json.dumps(log_entry, ensure_ascii=False, default=str)


def configure_logging(config: ExperimentConfig) -> logging.Logger:
    """
    Attach a single stream handler to the ``cto_seg`` logger.

    Repeated calls replace the handler instead of stacking duplicates.
    """
    logger = logging.getLogger("cto_seg")
    logger.setLevel(getattr(logging, str(config.get("log_level", "INFO")).upper()))

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    handler = logging.StreamHandler()
    if config.get("log_format", "json") == "json":
        formatter: logging.Formatter = JSONFormatter()
    else:
        formatter = logging.Formatter(
            fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
    handler.setFormatter(formatter)
    logger.addHandler(handler)
    logger.propagate = False
    return logger


class TrainingLogger:
    """
    Structured logger for training and evaluation runs.

    Every event carries a ``run_id`` so lines from one run can be grouped.
    """

    def __init__(self, config: ExperimentConfig, run_id: str):
        self.config = config
        self.run_id = run_id
        self.logger = logging.getLogger("cto_seg.training")
        self.log_every = int(config.get("log_every", 10))

    def log_run_start(self, model_info: Mapping[str, Any]) -> None:
        self.logger.info(
            "Training started",
            extra={"event": "train_start", "run_id": self.run_id, "model": dict(model_info)},
        )

    def log_step(
        self, epoch: int, step: int, breakdown: "LossBreakdown", duration: float
    ) -> None:
        """Log one optimizer step; non-periodic steps go out at DEBUG."""
        try:
            level = logging.INFO if step % self.log_every == 0 else logging.DEBUG
            self.logger.log(
                level,
                "Training step",
                extra={
                    "event": "train_step",
                    "run_id": self.run_id,
                    "epoch": epoch,
                    "step": step,
                    "loss": breakdown.as_dict(),
                    "timing": {"duration_ms": duration * 1000},
                },
            )
        except Exception:
            self.logger.error(
                "Failed to log training step",
                exc_info=True,
                extra={"run_id": self.run_id},
            )

    def log_epoch_end(
        self, epoch: int, mean_loss: float, checkpoint: Optional[str]
    ) -> None:
        self.logger.info(
            "Epoch completed",
            extra={
                "event": "epoch_end",
                "run_id": self.run_id,
                "epoch": epoch,
                "mean_loss": mean_loss,
                "checkpoint": checkpoint,
            },
        )

    def log_evaluation(self, summary: Mapping[str, Any]) -> None:
        self.logger.info(
            "Evaluation completed",
            extra={"event": "evaluation", "run_id": self.run_id, "summary": dict(summary)},
        )

    def log_exception(self, exception: BaseException, step: Optional[int]) -> None:
        try:
            self.logger.error(
                "Training exception",
                exc_info=exception,
                extra={
                    "event": "training_exception",
                    "run_id": self.run_id,
                    "step": step,
                    "exception": {
                        "type": exception.__class__.__name__,
                        "message": str(exception),
                    },
                },
            )
        except Exception:
            self.logger.error(
                "Failed to log exception", exc_info=True, extra={"run_id": self.run_id}
            )
