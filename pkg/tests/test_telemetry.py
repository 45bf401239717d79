from unittest.mock import patch

import torch

from cto_seg.losses import LossBreakdown
from cto_seg.telemetry import TrainingMetricsCollector


def _breakdown(with_boundary=True):
    t = torch.tensor
    return LossBreakdown(
        ce_per_head=(t(0.1), t(0.2), t(0.3)),
        miou_per_head=(t(0.4), t(0.5), t(0.6)),
        boundary_dice=t(0.25) if with_boundary else None,
        total=t(2.85),
        alpha=3.0,
    )


def test_metrics_collector_initialization(config):
    collector = TrainingMetricsCollector(config)
    assert collector.is_available()
    assert collector.registry is not None


def test_metrics_collector_no_prometheus(config):
    with patch("cto_seg.telemetry.PROMETHEUS_AVAILABLE", False):
        with patch("cto_seg.telemetry.logger") as mock_logger:
            collector = TrainingMetricsCollector(config)
            assert not collector.is_available()
            mock_logger.warning.assert_called_with(
                "prometheus_client is not installed; training metrics are disabled"
            )
            collector.record_step(_breakdown(), 4, 0.1)
            assert collector.get_metrics() == ""
            assert collector.write_textfile("unused.prom") is None


def test_record_step(config):
    collector = TrainingMetricsCollector(config)
    collector.record_step(_breakdown(), batch_size=4, duration=0.12)
    collector.record_step(_breakdown(), batch_size=4, duration=0.08)

    metrics = collector.get_metrics()
    assert "test_run_train_steps_total 2.0" in metrics
    assert "test_run_train_samples_total 8.0" in metrics
    assert "test_run_train_step_duration_seconds_count 2.0" in metrics
    assert 'test_run_train_loss{component="boundary_dice"} 0.25' in metrics
    for component in ("ce_head1", "ce_head3", "miou_head2", "total"):
        assert f'test_run_train_loss{{component="{component}"}}' in metrics


def test_record_step_without_boundary_head(config):
    collector = TrainingMetricsCollector(config)
    collector.record_step(_breakdown(with_boundary=False), batch_size=2, duration=0.1)
    metrics = collector.get_metrics()
    assert 'component="ce_head1"' in metrics
    assert "boundary_dice" not in metrics
    assert "alpha" not in metrics


def test_record_nonfinite_epoch_model(config):
    collector = TrainingMetricsCollector(config)
    collector.record_nonfinite("ce_head2")
    collector.record_epoch(3)
    collector.record_model({"variant": "full", "trainable_parameters": 1234})

    metrics = collector.get_metrics()
    assert 'test_run_nonfinite_loss_total{component="ce_head2"} 1.0' in metrics
    assert "test_run_train_epoch 3.0" in metrics
    assert 'variant="full"' in metrics
    assert 'trainable_parameters="1234"' in metrics


def test_record_evaluation_skips_missing(config):
    collector = TrainingMetricsCollector(config)
    collector.record_evaluation({"dice": 0.9, "iou": 0.8, "hd": None, "pq": 1.0})
    metrics = collector.get_metrics()
    assert 'test_run_eval_metric{metric="dice"} 0.9' in metrics
    assert 'metric="hd"' not in metrics


def test_write_textfile(config, tmp_path):
    collector = TrainingMetricsCollector(config)
    collector.record_epoch(1)
    path = collector.write_textfile(tmp_path / "nested" / "metrics.prom")
    assert path is not None
    assert "test_run_train_epoch 1.0" in path.read_text()


def test_private_registries_do_not_collide(config):
    first = TrainingMetricsCollector(config)
    second = TrainingMetricsCollector(config)
    first.record_epoch(5)
    assert "test_run_train_epoch 0.0" in second.get_metrics()
    assert "test_run_train_epoch 5.0" in first.get_metrics()
