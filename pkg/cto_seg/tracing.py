"""
OpenTelemetry spans for cto-seg runs.

Epochs, evaluation passes and inference calls each open one span, exported
over OTLP when an endpoint is configured and printed to the console otherwise.
"""

import logging
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

from . import __version__

logger = logging.getLogger("cto_seg.tracing")

try:
    from opentelemetry import trace
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import (
        BatchSpanProcessor,
        ConsoleSpanExporter,
        SpanExporter,
    )
    from opentelemetry.sdk.trace.sampling import TraceIdRatioBased

    OPENTELEMETRY_AVAILABLE = True
except ImportError as e:
    OPENTELEMETRY_AVAILABLE = False
    logger.warning(f"OpenTelemetry SDK missing ({e}); spans will not be recorded")

try:
    from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter

    OTLP_AVAILABLE = True
except ImportError:
    OTLP_AVAILABLE = False

from .config import ExperimentConfig


class TracingManager:
    """
    Span factory for one run.

    The manager owns its TracerProvider instead of installing a global one,
    so independent runs in one process keep separate exporters.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.tracer = None
        self._provider = None
        self._span_processor = None

        if not OPENTELEMETRY_AVAILABLE:
            logger.warning("Tracing requested but OpenTelemetry is not installed")
            return

        try:
            self._provider = TracerProvider(
                resource=Resource.create(
                    {
                        "service.name": config.get_service_name(),
                        "service.version": __version__,
                    }
                ),
                sampler=TraceIdRatioBased(config.get_sample_rate()),
            )
            self._span_processor = BatchSpanProcessor(self._build_exporter())
            self._provider.add_span_processor(self._span_processor)
            self.tracer = self._provider.get_tracer("cto_seg")
            logger.info(
                "Tracing enabled",
                extra={
                    "service_name": config.get_service_name(),
                    "sample_rate": config.get_sample_rate(),
                },
            )
        except Exception as e:
            self.tracer = None
            logger.error(f"Tracing setup failed: {e}", exc_info=True)

    def _build_exporter(self) -> "SpanExporter":
        endpoint = self.config.get("otlp_endpoint")
        if not endpoint:
            return ConsoleSpanExporter()
        if not OTLP_AVAILABLE:
            logger.warning("otlp_endpoint is set but the OTLP exporter is not installed")
            return ConsoleSpanExporter()
        try:
            exporter = OTLPSpanExporter(endpoint=endpoint)
        except Exception as e:
            logger.error(f"OTLP exporter for {endpoint} failed ({e}); printing spans instead")
            return ConsoleSpanExporter()
        logger.info(f"Exporting spans to {endpoint}")
        return exporter

    def is_available(self) -> bool:
        return OPENTELEMETRY_AVAILABLE and self.tracer is not None

    @contextmanager
    def span(
        self, name: str, attributes: Optional[Dict[str, Any]] = None
    ) -> Iterator[Optional["trace.Span"]]:
        """
        Run a block inside a span; exceptions are recorded and re-raised.

        Yields None when tracing is unavailable so callers need no branching.
        """
        if not self.is_available():
            yield None
            return

        with self.tracer.start_as_current_span(
            name, attributes=attributes or {}, record_exception=False
        ) as span:
            try:
                yield span
            except BaseException as exc:
                self.record_exception(span, exc)
                raise
            span.set_status(trace.Status(trace.StatusCode.OK))

    def record_exception(
        self, span: Optional["trace.Span"], exception: BaseException
    ) -> None:
        """Mark ``span`` as failed with ``exception``; a no-op without a live span."""
        if span is None or not self.is_available():
            return
        try:
            span.record_exception(exception)
            span.set_status(trace.Status(trace.StatusCode.ERROR, str(exception)))
        except Exception as e:
            logger.error(f"Could not record {exception.__class__.__name__} on span: {e}")

    def shutdown(self) -> None:
        """Flush pending spans and release the exporter."""
        if self._provider is None:
            return
        try:
            self._provider.shutdown()
        except Exception as e:
            logger.error(f"Tracer provider shutdown failed: {e}")
