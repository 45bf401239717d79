import pytest

from cto_seg import config as config_module
from cto_seg.config import (
    BackboneConfig,
    ExperimentConfig,
    ModelConfig,
    TrainConfig,
    config_to_dict,
    get_config,
    model_config_from_dict,
    parse_config_file,
    reload_config,
    train_config_from_dict,
)
from cto_seg.exceptions import ConfigurationError


def test_train_defaults_match_recipe():
    """Test the training defaults: Adam lr 1e-4, batch 32, 256px, 90 epochs, alpha 3."""
    tc = ExperimentConfig().train_config()
    assert tc.lr == 1e-4
    assert tc.batch == 32
    assert tc.epochs == 90
    assert tc.size == 256
    assert tc.alpha == 3.0
    assert tc.betas == (0.9, 0.999)
    assert tc.eps == 1e-8
    assert tc.schedule == "constant"


def test_desk_preset():
    """Test --desk lowers batch and size without touching other defaults."""
    cfg = ExperimentConfig(overrides={"desk": True})
    assert cfg.train_config().batch == 4
    assert cfg.train_config().size == 64
    assert cfg.train_config().lr == 1e-4
    assert cfg.model_config().image_size == 64
    assert TrainConfig.desk().batch == 4


def test_explicit_values_beat_desk_preset():
    cfg = ExperimentConfig(overrides={"desk": True, "batch": 2})
    assert cfg.train_config().batch == 2
    assert cfg.train_config().size == 64


def test_config_file_parsing(tmp_path):
    """Test flat key = value files with comments and list values."""
    path = tmp_path / "run.cfg"
    path.write_text(
        "# tiny run\n"
        "variant = cnn+vit\n"
        "stage_channels = 8,16,32,64  # widths\n"
        "blocks_per_stage = 1,1,1,1\n"
        "\n"
        "lr = 0.001\n"
        "tracing_enabled = true\n"
    )
    values = parse_config_file(path)
    assert values["variant"] == "cnn+vit"
    assert values["stage_channels"] == (8, 16, 32, 64)
    assert values["lr"] == 0.001
    assert values["tracing_enabled"] is True


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate = 0.1\n")
    with pytest.raises(ConfigurationError, match="unknown configuration key"):
        parse_config_file(path)


def test_config_file_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("variant full\n")
    with pytest.raises(ConfigurationError, match="expected 'key = value'"):
        parse_config_file(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError, match="Cannot read config file"):
        ExperimentConfig(config_file=tmp_path / "absent.cfg")


def test_layering_order(tmp_path, monkeypatch):
    """Test defaults < file < environment < overrides."""
    path = tmp_path / "run.cfg"
    path.write_text("lr = 0.01\nbatch = 8\nepochs = 5\n")
    monkeypatch.setenv("CTO_SEG_BATCH", "16")
    monkeypatch.setenv("CTO_SEG_EPOCHS", "7")

    cfg = ExperimentConfig(config_file=path, overrides={"epochs": 3})
    assert cfg.get("lr") == 0.01
    assert cfg.get("batch") == 16
    assert cfg.get("epochs") == 3
    assert cfg.get("seed") == 0


def test_none_overrides_are_ignored():
    cfg = ExperimentConfig(overrides={"lr": None, "batch": 2})
    assert cfg.get("lr") == 1e-4
    assert cfg.get("batch") == 2


def test_env_otlp_endpoint(monkeypatch):
    monkeypatch.setenv("OTEL_EXPORTER_OTLP_ENDPOINT", "http://collector:4317")
    assert ExperimentConfig().get("otlp_endpoint") == "http://collector:4317"


def test_invalid_env_value(monkeypatch):
    monkeypatch.setenv("CTO_SEG_BATCH", "many")
    with pytest.raises(ConfigurationError, match="Invalid value for batch"):
        ExperimentConfig()


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"variant": "unet"}, "Unknown variant"),
        ({"lr": -1.0}, "lr must be >= 0"),
        ({"batch": 0}, "batch must be >= 1"),
        ({"heads": 3}, "divisible by heads"),
        ({"size": 100}, "multiple of 32"),
        ({"blocks_per_stage": "1,0,1,1"}, "blocks_per_stage"),
        ({"stage_channels": "64,32,16,8"}, "nondecreasing"),
        ({"schedule": "cosine"}, "constant"),
        ({"log_format": "xml"}, "log_format"),
        ({"log_level": "LOUD"}, "log_level"),
        ({"tracing_sample_rate": 1.5}, "tracing_sample_rate"),
    ],
)
def test_validation_errors(overrides, message):
    with pytest.raises(ConfigurationError, match=message):
        ExperimentConfig(overrides=overrides)


def test_sample_rate_validation_edge_cases():
    """Test sample rate validation with edge cases."""
    cfg = ExperimentConfig()
    cfg._config["tracing_sample_rate"] = 0.0
    assert cfg.get_sample_rate() == 0.0
    cfg._config["tracing_sample_rate"] = 1.0
    assert cfg.get_sample_rate() == 1.0
    cfg._config["tracing_sample_rate"] = -0.1
    with pytest.raises(ValueError, match="between 0.0 and 1.0"):
        cfg.get_sample_rate()


def test_observability_switches():
    cfg = ExperimentConfig(
        overrides={"tracing_enabled": "yes", "metrics_enabled": "0", "log_enabled": False}
    )
    assert cfg.is_tracing_enabled()
    assert not cfg.is_metrics_enabled()
    assert not cfg.is_logging_enabled()
    assert cfg.get_service_name() == "cto-seg"
    assert cfg.get_metrics_prefix() == "cto_seg"


def test_model_config_from_flat_values():
    cfg = ExperimentConfig(
        overrides={
            "variant": "cnn+vit+bem",
            "stem_channels": 8,
            "stage_channels": "8,16,32,64",
            "blocks_per_stage": "1,1,1,1",
            "size": 64,
        }
    )
    model = cfg.model_config()
    assert model.variant == "cnn+vit+bem"
    assert model.backbone == BackboneConfig(8, (8, 16, 32, 64), (1, 1, 1, 1))
    assert model.image_size == 64


def test_variant_flags():
    assert not ModelConfig(variant="cnn").uses_vit
    assert ModelConfig(variant="cnn").boundary_module is None
    assert ModelConfig(variant="cnn+vit").boundary_module is None
    assert ModelConfig(variant="cnn+vit+cbm").boundary_module == "cbm"
    assert ModelConfig(variant="cnn+vit+bem").boundary_module == "bem"
    assert not ModelConfig(variant="cnn+vit+bem").uses_bim
    assert ModelConfig(variant="full").uses_bim


def test_dataclass_dict_round_trip():
    model = ModelConfig.tiny("cnn+vit+cbm", classes=3)
    train = TrainConfig.desk(max_steps=7)
    assert model_config_from_dict(config_to_dict(model)) == model
    assert train_config_from_dict(config_to_dict(train)) == train


def test_from_dict_ignores_unknown_keys():
    data = config_to_dict(ModelConfig.tiny())
    data["retired_option"] = 1
    assert model_config_from_dict(data) == ModelConfig.tiny()


def test_global_config_helpers():
    assert config_module.config is None
    first = get_config()
    assert get_config() is first
    reloaded = reload_config(overrides={"seed": 9})
    assert reloaded is not first
    assert get_config().get("seed") == 9


def test_force_reload_reads_environment(monkeypatch):
    cfg = ExperimentConfig()
    monkeypatch.setenv("CTO_SEG_SEED", "42")
    assert cfg.get("seed") == 0
    cfg.force_reload()
    assert cfg.get("seed") == 42


def test_as_dict_is_a_copy():
    cfg = ExperimentConfig()
    snapshot = cfg.as_dict()
    snapshot["lr"] = 1.0
    assert cfg.get("lr") == 1e-4
