"""
Pytest configuration and fixtures for cto-seg tests.
"""

import logging

import pytest
import torch

import cto_seg.config
from cto_seg.config import ExperimentConfig, ModelConfig, TrainConfig
from cto_seg.data import SyntheticShapes

ENV_KEYS = (
    "CTO_SEG_LR",
    "CTO_SEG_BATCH",
    "CTO_SEG_EPOCHS",
    "CTO_SEG_SIZE",
    "CTO_SEG_ALPHA",
    "CTO_SEG_SEED",
    "CTO_SEG_VARIANT",
    "CTO_SEG_LOG_LEVEL",
    "CTO_SEG_LOG_FORMAT",
    "CTO_SEG_TRACING_ENABLED",
    "CTO_SEG_METRICS_ENABLED",
    "OTEL_EXPORTER_OTLP_ENDPOINT",
)


@pytest.fixture(autouse=True)
def reset_global_state(monkeypatch):
    """Reset global state between tests."""
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)
    cto_seg.config.config = None
    torch.manual_seed(0)
    yield
    cto_seg.config.config = None
    package_logger = logging.getLogger("cto_seg")
    for handler in package_logger.handlers[:]:
        package_logger.removeHandler(handler)
    package_logger.setLevel(logging.NOTSET)
    package_logger.propagate = True


@pytest.fixture
def config():
    """Quiet configuration: no tracing, metrics on with a test prefix."""
    return ExperimentConfig(
        overrides={
            "metrics_prefix": "test_run",
            "tracing_enabled": False,
            "log_level": "DEBUG",
        }
    )


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny()


@pytest.fixture
def desk_train_config(tmp_path):
    return TrainConfig.desk(epochs=2, checkpoint_dir=str(tmp_path / "ckpt"))


@pytest.fixture
def synthetic():
    return SyntheticShapes(8, size=64, seed=0)


@pytest.fixture
def float64():
    """Run the test in float64 and restore the previous default dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
