"""
Configuration management for cto-seg.

This module handles all configuration aspects: typed architecture and training
configs, a flat key/value config file, environment variables and command-line
overrides, with validation and the published training defaults.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from .exceptions import ConfigurationError

VARIANTS = ("cnn", "cnn+vit", "cnn+vit+cbm", "cnn+vit+bem", "full")
PATCH_SIZES = (4, 8, 16, 32)
PYRAMID_STRIDES = (4, 8, 16, 32)


@dataclass(frozen=True)
class BackboneConfig:
    """Widths and depths of the residual convolution stream."""

    stem_channels: int = 64
    stage_channels: Tuple[int, int, int, int] = (64, 128, 256, 512)
    blocks_per_stage: Tuple[int, int, int, int] = (3, 4, 6, 3)

    def validate(self) -> None:
        if self.stem_channels < 1:
            raise ConfigurationError(
                f"stem_channels must be >= 1, got {self.stem_channels}"
            )
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ConfigurationError(
                "stage_channels and blocks_per_stage must each have 4 entries"
            )
        if any(c < 1 for c in self.stage_channels):
            raise ConfigurationError(
                f"stage_channels must all be >= 1, got {self.stage_channels}"
            )
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigurationError(
                f"blocks_per_stage must all be >= 1, got {self.blocks_per_stage}"
            )
        if any(a > b for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigurationError(
                f"stage_channels must be nondecreasing, got {self.stage_channels}"
            )


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of an assembled model; `variant` selects the ablation row."""

    variant: str = "full"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    vit_dmodel: int = 64
    heads: int = 4
    vit_ffn_dim: int = 128
    vit_channels: int = 64
    vit_pad_to_patch: bool = True
    boundary_channels: int = 32
    decoder_channels: int = 64
    classes: int = 1
    boundary_width: int = 1
    image_size: int = 256

    @classmethod
    def tiny(cls, variant: str = "full", **overrides: Any) -> "ModelConfig":
        """
        Smallest configuration that still fits 64x64 synthetic data in a few
        hundred Adam steps at lr 1e-4.
        """
        base = cls(
            variant=variant,
            backbone=BackboneConfig(
                stem_channels=8,
                stage_channels=(8, 16, 32, 64),
                blocks_per_stage=(1, 1, 1, 1),
            ),
            vit_dmodel=32,
            heads=2,
            vit_ffn_dim=64,
            vit_channels=16,
            boundary_channels=16,
            decoder_channels=32,
            image_size=64,
        )
        return replace(base, **overrides)

    @property
    def uses_vit(self) -> bool:
        return self.variant != "cnn"

    @property
    def boundary_module(self) -> Optional[str]:
        if self.variant == "cnn+vit+cbm":
            return "cbm"
        if self.variant in ("cnn+vit+bem", "full"):
            return "bem"
        return None

    @property
    def uses_bim(self) -> bool:
        return self.variant == "full"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"Unknown variant '{self.variant}', expected one of {VARIANTS}"
            )
        self.backbone.validate()
        for name in (
            "vit_dmodel",
            "heads",
            "vit_ffn_dim",
            "vit_channels",
            "boundary_channels",
            "decoder_channels",
            "classes",
            "boundary_width",
        ):
            value = getattr(self, name)
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.vit_dmodel % self.heads != 0:
            raise ConfigurationError(
                f"vit_dmodel ({self.vit_dmodel}) must be divisible by heads ({self.heads})"
            )
        if self.image_size < 32 or self.image_size % 32 != 0:
            raise ConfigurationError(
                f"image_size must be a positive multiple of 32, got {self.image_size}"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and loss settings for a training run."""

    lr: float = 1e-4
    batch: int = 32
    epochs: int = 90
    size: int = 256
    alpha: float = 3.0
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "constant"
    max_steps: Optional[int] = None
    log_every: int = 10
    workers: int = 0

    @classmethod
    def desk(cls, **overrides: Any) -> "TrainConfig":
        """Laptop-scale preset: batch 4 at 64x64."""
        return replace(cls(batch=4, size=64), **overrides)

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        for name in ("batch", "epochs", "size", "log_every"):
            value = getattr(self, name)
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.workers < 0:
            raise ConfigurationError(f"workers must be >= 0, got {self.workers}")
        if self.schedule != "constant":
            raise ConfigurationError(
                f"Only the 'constant' schedule is supported, got '{self.schedule}'"
            )


def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("true", "1", "yes", "on")


def _parse_int_list(value: Any) -> Tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v.strip())


def _parse_float_list(value: Any) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _parse_optional_int(value: Any) -> Optional[int]:
    if value is None or str(value).strip().lower() in ("", "none", "null"):
        return None
    return int(value)


def _parse_optional_str(value: Any) -> Optional[str]:
    if value is None or str(value).strip().lower() in ("", "none", "null"):
        return None
    return str(value)


KEY_TYPES: Dict[str, Callable[[Any], Any]] = {
    # Model
    "variant": str,
    "classes": int,
    "heads": int,
    "vit_dmodel": int,
    "vit_ffn_dim": int,
    "vit_channels": int,
    "vit_pad_to_patch": _parse_bool,
    "boundary_channels": int,
    "decoder_channels": int,
    "boundary_width": int,
    "image_size": _parse_optional_int,
    "stem_channels": int,
    "stage_channels": _parse_int_list,
    "blocks_per_stage": _parse_int_list,
    # Training
    "lr": float,
    "batch": int,
    "epochs": int,
    "size": int,
    "alpha": float,
    "seed": int,
    "checkpoint": str,
    "weight_decay": float,
    "schedule": str,
    "max_steps": _parse_optional_int,
    "log_every": int,
    "workers": int,
    "desk": _parse_bool,
    # Logging
    "log_enabled": _parse_bool,
    "log_format": str,
    "log_level": str,
    # Tracing
    "tracing_enabled": _parse_bool,
    "tracing_sample_rate": float,
    "otlp_endpoint": _parse_optional_str,
    "service_name": str,
    # Metrics
    "metrics_enabled": _parse_bool,
    "metrics_prefix": str,
    "metrics_textfile": _parse_optional_str,
    "metrics_histogram_buckets": _parse_float_list,
}

DESK_PRESET: Dict[str, Any] = {"batch": 4, "size": 64}


def parse_config_file(path: "os.PathLike[str] | str") -> Dict[str, Any]:
    """
    Parse a flat ``key = value`` configuration file.

    Blank lines and ``#`` comments are ignored; list values are comma separated.

    Raises:
        ConfigurationError: unreadable file, malformed line or unknown key
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e

    config: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        config[key] = _coerce(key, value, source=f"{path}:{lineno}")
    return config


def _coerce(key: str, value: Any, source: str) -> Any:
    if key not in KEY_TYPES:
        raise ConfigurationError(f"{source}: unknown configuration key '{key}'")
    try:
        return KEY_TYPES[key](value)
    except (ValueError, TypeError) as e:
        raise ConfigurationError(
            f"Invalid value for {key} ({source}): {value!r}. Error: {e}"
        ) from e


class ExperimentConfig:
    """
    Centralized configuration for a cto-seg run.

    Values are layered, later sources winning:
    1. Built-in defaults
    2. A flat key/value config file
    3. Environment variables (CTO_SEG_*)
    4. Explicit overrides (command-line flags)
    """

    def __init__(
        self,
        config_file: "os.PathLike[str] | str | None" = None,
        overrides: Optional[Dict[str, Any]] = None,
    ):
        self.config_file = config_file
        self.overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        self._config = self._load_config()

    @staticmethod
    def defaults() -> Dict[str, Any]:
        model = ModelConfig()
        train = TrainConfig()
        return {
            # Model configuration
            "variant": model.variant,
            "classes": model.classes,
            "heads": model.heads,
            "vit_dmodel": model.vit_dmodel,
            "vit_ffn_dim": model.vit_ffn_dim,
            "vit_channels": model.vit_channels,
            "vit_pad_to_patch": model.vit_pad_to_patch,
            "boundary_channels": model.boundary_channels,
            "decoder_channels": model.decoder_channels,
            "boundary_width": model.boundary_width,
            "image_size": None,
            "stem_channels": model.backbone.stem_channels,
            "stage_channels": model.backbone.stage_channels,
            "blocks_per_stage": model.backbone.blocks_per_stage,
            # Training configuration
            "lr": train.lr,
            "batch": train.batch,
            "epochs": train.epochs,
            "size": train.size,
            "alpha": train.alpha,
            "seed": train.seed,
            "checkpoint": train.checkpoint_dir,
            "weight_decay": train.weight_decay,
            "schedule": train.schedule,
            "max_steps": train.max_steps,
            "log_every": train.log_every,
            "workers": train.workers,
            "desk": False,
            # Logging configuration
            "log_enabled": True,
            "log_format": "json",
            "log_level": "INFO",
            # Tracing configuration
            "tracing_enabled": False,
            "tracing_sample_rate": 1.0,
            "otlp_endpoint": None,
            "service_name": "cto-seg",
            # Metrics configuration
            "metrics_enabled": True,
            "metrics_prefix": "cto_seg",
            "metrics_textfile": None,
            "metrics_histogram_buckets": [
                0.01,
                0.025,
                0.05,
                0.1,
                0.25,
                0.5,
                1.0,
                2.5,
                5.0,
                10.0,
                30.0,
            ],
        }

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from defaults, file, environment and overrides."""
        explicit: Dict[str, Any] = {}

        if self.config_file is not None:
            explicit.update(parse_config_file(self.config_file))

        explicit.update(self._load_env_config())

        for key, value in self.overrides.items():
            explicit[key] = _coerce(key, value, source="override")

        config = self.defaults()
        if explicit.get("desk", False):
            config.update(DESK_PRESET)
        config.update(explicit)

        self._validate_config(config)
        return config

    def _load_env_config(self) -> Dict[str, Any]:
        """Load configuration from environment variables."""
        env_mapping = {
            "CTO_SEG_LR": "lr",
            "CTO_SEG_BATCH": "batch",
            "CTO_SEG_EPOCHS": "epochs",
            "CTO_SEG_SIZE": "size",
            "CTO_SEG_ALPHA": "alpha",
            "CTO_SEG_SEED": "seed",
            "CTO_SEG_VARIANT": "variant",
            "CTO_SEG_LOG_LEVEL": "log_level",
            "CTO_SEG_LOG_FORMAT": "log_format",
            "CTO_SEG_TRACING_ENABLED": "tracing_enabled",
            "CTO_SEG_METRICS_ENABLED": "metrics_enabled",
            "OTEL_EXPORTER_OTLP_ENDPOINT": "otlp_endpoint",
        }

        config = {}
        for env_key, config_key in env_mapping.items():
            value = os.getenv(env_key)
            if value is not None:
                config[config_key] = _coerce(config_key, value, source=env_key)
        return config

    def _validate_config(self, config: Dict[str, Any]) -> None:
        """Validate cross-cutting values; dataclass validation covers the rest."""
        sample_rate = config.get("tracing_sample_rate", 1.0)
        if not 0.0 <= sample_rate <= 1.0:
            raise ConfigurationError(
                f"tracing_sample_rate must be between 0.0 and 1.0, got {sample_rate}"
            )

        log_format = config.get("log_format", "json")
        if log_format not in ("json", "text"):
            raise ConfigurationError(
                f"log_format must be 'json' or 'text', got {log_format}"
            )

        log_level = str(config.get("log_level", "INFO")).upper()
        if log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigurationError(f"Unknown log_level {log_level}")

        self._build_model_config(config).validate()
        self._build_train_config(config).validate()

    @staticmethod
    def _build_model_config(config: Dict[str, Any]) -> ModelConfig:
        backbone = BackboneConfig(
            stem_channels=config["stem_channels"],
            stage_channels=tuple(config["stage_channels"]),
            blocks_per_stage=tuple(config["blocks_per_stage"]),
        )
        return ModelConfig(
            variant=config["variant"],
            backbone=backbone,
            vit_dmodel=config["vit_dmodel"],
            heads=config["heads"],
            vit_ffn_dim=config["vit_ffn_dim"],
            vit_channels=config["vit_channels"],
            vit_pad_to_patch=config["vit_pad_to_patch"],
            boundary_channels=config["boundary_channels"],
            decoder_channels=config["decoder_channels"],
            classes=config["classes"],
            boundary_width=config["boundary_width"],
            image_size=config["image_size"] or config["size"],
        )

    @staticmethod
    def _build_train_config(config: Dict[str, Any]) -> TrainConfig:
        return TrainConfig(
            lr=config["lr"],
            batch=config["batch"],
            epochs=config["epochs"],
            size=config["size"],
            alpha=config["alpha"],
            seed=config["seed"],
            checkpoint_dir=config["checkpoint"],
            weight_decay=config["weight_decay"],
            schedule=config["schedule"],
            max_steps=config["max_steps"],
            log_every=config["log_every"],
            workers=config["workers"],
        )

    def force_reload(self) -> None:
        """Force reload configuration (for testing)."""
        self._config = self._load_config()

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value."""
        return self._config.get(key, default)

    def model_config(self) -> ModelConfig:
        return self._build_model_config(self._config)

    def train_config(self) -> TrainConfig:
        return self._build_train_config(self._config)

    def is_logging_enabled(self) -> bool:
        return bool(self._config.get("log_enabled", True))

    def is_tracing_enabled(self) -> bool:
        return bool(self._config.get("tracing_enabled", False))

    def is_metrics_enabled(self) -> bool:
        return bool(self._config.get("metrics_enabled", True))

    def get_service_name(self) -> str:
        return self._config.get("service_name", "cto-seg")

    def get_sample_rate(self) -> float:
        sample_rate = self._config.get("tracing_sample_rate", 1.0)
        if not 0.0 <= sample_rate <= 1.0:
            raise ValueError(
                f"tracing_sample_rate must be between 0.0 and 1.0, got {sample_rate}"
            )
        return sample_rate

    def get_metrics_prefix(self) -> str:
        return self._config.get("metrics_prefix", "cto_seg")

    def as_dict(self) -> Dict[str, Any]:
        """Return configuration as dictionary (useful for debugging)."""
        return self._config.copy()


def config_to_dict(cfg: Any) -> Dict[str, Any]:
    """Plain-dict form of a config dataclass; nested configs become dicts."""
    return asdict(cfg)


def model_config_from_dict(data: Dict[str, Any]) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    values = {k: v for k, v in data.items() if k in known}
    backbone = values.pop("backbone", {}) or {}
    return ModelConfig(
        backbone=BackboneConfig(
            stem_channels=backbone.get("stem_channels", 64),
            stage_channels=tuple(backbone.get("stage_channels", (64, 128, 256, 512))),
            blocks_per_stage=tuple(backbone.get("blocks_per_stage", (3, 4, 6, 3))),
        ),
        **values,
    )


def train_config_from_dict(data: Dict[str, Any]) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    values = {k: v for k, v in data.items() if k in known}
    if "betas" in values:
        values["betas"] = tuple(values["betas"])
    return TrainConfig(**values)


# Global configuration instance, built lazily so importing never reads the environment
config: Optional[ExperimentConfig] = None


def get_config() -> ExperimentConfig:
    """Get the global configuration instance."""
    global config
    if config is None:
        config = ExperimentConfig()
    return config


def reload_config(
    config_file: "os.PathLike[str] | str | None" = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """Reload configuration (useful for testing)."""
    global config
    config = ExperimentConfig(config_file=config_file, overrides=overrides)
    return config
