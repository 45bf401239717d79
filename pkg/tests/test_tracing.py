import pytest
from opentelemetry.sdk.trace.export import ConsoleSpanExporter, SimpleSpanProcessor
from opentelemetry.sdk.trace.export.in_memory_span_exporter import InMemorySpanExporter
from opentelemetry.trace import StatusCode

from cto_seg.config import ExperimentConfig
from cto_seg.tracing import TracingManager


@pytest.fixture
def tracing_config():
    return ExperimentConfig(overrides={"tracing_enabled": True, "service_name": "tests"})


@pytest.fixture
def recorded(tracing_config):
    """TracingManager with an in-memory exporter attached."""
    manager = TracingManager(tracing_config)
    exporter = InMemorySpanExporter()
    manager._provider.add_span_processor(SimpleSpanProcessor(exporter))
    yield manager, exporter
    manager.shutdown()


def test_tracing_defaults_to_console(tracing_config):
    manager = TracingManager(tracing_config)
    assert manager.is_available()
    assert isinstance(manager._span_processor.span_exporter, ConsoleSpanExporter)
    manager.shutdown()


def test_tracing_otlp_failure(tracing_config, mocker):
    """Test tracing setup with invalid OTLP endpoint and fallback to ConsoleSpanExporter."""
    mocker.patch(
        "cto_seg.tracing.OTLPSpanExporter",
        side_effect=Exception("Invalid endpoint"),
    )
    tracing_config._config["otlp_endpoint"] = "invalid://endpoint"

    manager = TracingManager(tracing_config)

    assert manager.is_available()
    span_exporter = manager._span_processor.span_exporter
    assert isinstance(
        span_exporter, ConsoleSpanExporter
    ), f"Expected ConsoleSpanExporter, got {type(span_exporter)}"
    manager.shutdown()


def test_tracing_otlp_endpoint(tracing_config, mocker):
    exporter_cls = mocker.patch("cto_seg.tracing.OTLPSpanExporter")
    tracing_config._config["otlp_endpoint"] = "http://collector:4317"
    manager = TracingManager(tracing_config)
    exporter_cls.assert_called_once_with(endpoint="http://collector:4317")
    assert manager.is_available()
    manager.shutdown()


def test_span_records_attributes(recorded):
    manager, exporter = recorded
    with manager.span("train_epoch", {"epoch": 2}) as span:
        assert span is not None

    (finished,) = exporter.get_finished_spans()
    assert finished.name == "train_epoch"
    assert finished.attributes["epoch"] == 2
    assert finished.status.status_code == StatusCode.OK
    assert finished.resource.attributes["service.name"] == "tests"


def test_span_records_exception(recorded):
    manager, exporter = recorded
    with pytest.raises(RuntimeError, match="boom"):
        with manager.span("evaluate"):
            raise RuntimeError("boom")

    (finished,) = exporter.get_finished_spans()
    assert finished.status.status_code == StatusCode.ERROR
    assert finished.events[0].name == "exception"


def test_tracing_unavailable(tracing_config, mocker):
    mocker.patch("cto_seg.tracing.OPENTELEMETRY_AVAILABLE", False)
    manager = TracingManager(tracing_config)
    assert not manager.is_available()
    with manager.span("noop") as span:
        assert span is None
    manager.record_exception(None, ValueError("ignored"))
    manager.shutdown()
