"""
Prometheus metrics for training and evaluation.

Nothing is served over HTTP: the trainer writes the registry to a
``metrics.prom`` textfile next to its checkpoints and ``evaluate`` does the
same next to its reports, ready for a node-exporter textfile collector.
"""

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping, Optional

try:
    from prometheus_client import (
        CollectorRegistry,
        Counter,
        Gauge,
        Histogram,
        Info,
        generate_latest,
        write_to_textfile,
    )

    PROMETHEUS_AVAILABLE = True
except ImportError:
    PROMETHEUS_AVAILABLE = False

from .config import ExperimentConfig

if TYPE_CHECKING:
    from .losses import LossBreakdown

logger = logging.getLogger("cto_seg.telemetry")

EVAL_METRICS = ("dice", "iou", "hd", "pq")


class TrainingMetricsCollector:
    """
    Counters, gauges and a step-time histogram for one run.

    Each collector owns a private registry, so several runs (or tests) in one
    process never collide on metric names. Every ``record_*`` method is a
    no-op when prometheus_client is missing.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.registry: Optional["CollectorRegistry"] = None

        if not PROMETHEUS_AVAILABLE:
            logger.warning(
                "prometheus_client is not installed; training metrics are disabled"
            )
            return

        self.registry = CollectorRegistry()
        self._register()
        logger.debug(
            "Metrics registry ready", extra={"prefix": config.get_metrics_prefix()}
        )

    def _name(self, suffix: str) -> str:
        return f"{self.config.get_metrics_prefix()}_{suffix}"

    def _register(self) -> None:
        reg = self.registry
        buckets = self.config.get("metrics_histogram_buckets")

        self.steps = Counter(
            self._name("train_steps_total"), "Optimizer steps taken", registry=reg
        )
        self.samples = Counter(
            self._name("train_samples_total"),
            "Training samples consumed",
            registry=reg,
        )
        self.step_seconds = Histogram(
            self._name("train_step_duration_seconds"),
            "Wall-clock time of one optimizer step",
            buckets=buckets,
            registry=reg,
        )
        self.loss = Gauge(
            self._name("train_loss"),
            "Latest value of each loss component",
            ["component"],
            registry=reg,
        )
        self.nonfinite = Counter(
            self._name("nonfinite_loss_total"),
            "Steps aborted because a loss component was NaN or infinite",
            ["component"],
            registry=reg,
        )
        self.epoch = Gauge(
            self._name("train_epoch"), "Last completed epoch", registry=reg
        )
        self.eval_metric = Gauge(
            self._name("eval_metric"),
            "Split mean of an evaluation metric",
            ["metric"],
            registry=reg,
        )
        self.model = Info(self._name("model"), "Model variant and size", registry=reg)

    def is_available(self) -> bool:
        return self.registry is not None

    def record_model(self, info: Mapping[str, Any]) -> None:
        if self.registry is None:
            return
        self.model.info({key: str(value) for key, value in info.items()})

    def record_step(
        self, breakdown: "LossBreakdown", batch_size: int, duration: float
    ) -> None:
        """
        Count one optimizer step and refresh the loss gauges.

        ``alpha`` is a weight rather than a loss and is skipped, as is the
        boundary term of variants without a boundary head.
        """
        if self.registry is None:
            return
        try:
            self.steps.inc()
            self.samples.inc(batch_size)
            self.step_seconds.observe(duration)
            components = breakdown.as_dict()
        except Exception as e:
            logger.error(f"Could not record training step: {e}")
            return
        for component, value in components.items():
            if component != "alpha" and value is not None:
                self.loss.labels(component=component).set(value)

    def record_nonfinite(self, component: str) -> None:
        if self.registry is not None:
            self.nonfinite.labels(component=component).inc()

    def record_epoch(self, epoch: int) -> None:
        if self.registry is not None:
            self.epoch.set(epoch)

    def record_evaluation(self, summary: Mapping[str, Any]) -> None:
        # hd is None when no image had a defined distance.
        if self.registry is None:
            return
        for metric in EVAL_METRICS:
            if summary.get(metric) is not None:
                self.eval_metric.labels(metric=metric).set(summary[metric])

    def get_metrics(self) -> str:
        """Registry contents in the Prometheus text exposition format, or ``""``."""
        if self.registry is None:
            return ""
        try:
            return generate_latest(self.registry).decode("utf-8")
        except Exception as e:
            logger.error(f"Could not render metrics: {e}")
            return ""

    def write_textfile(self, path: "Path | str") -> Optional[Path]:
        """Write the registry in node-exporter textfile format."""
        if self.registry is None:
            return None
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            write_to_textfile(str(path), self.registry)
        except Exception as e:
            logger.error(f"Could not write metrics textfile {path}: {e}")
            return None
        return path

