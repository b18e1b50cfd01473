"""Experiment configuration: YAML file plus command-line overrides.

Relative paths in a config file resolve against the file's directory.
The cache directory falls back to the LAYERPROBE_CACHE environment
variable when neither flag nor file provides one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError, MissingFile
from .evaluation import AggregationMode
from .probe import TrainConfig

CACHE_ENV_VAR = "LAYERPROBE_CACHE"


@dataclass
class ExperimentConfig:
    manifest_path: Path | None = None
    cache_dir: Path | None = None
    output_dir: Path | None = None
    adapter_spec: str | None = None
    adapter_layers: int = 24
    adapter_dim: int = 64
    checkpoint: str | None = None
    k: int = 10
    split_seed: int = 0
    layers: tuple[int, ...] | None = None  # None selects every adapter layer
    aggregation_mode: str = AggregationMode.POOLED_SPEAKERS
    train: TrainConfig = field(default_factory=TrainConfig)

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"missing required setting {name!r}")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")

    def to_mapping(self) -> dict:
        return {
            "manifest": str(self.manifest_path) if self.manifest_path else None,
            "cache_dir": str(self.cache_dir) if self.cache_dir else None,
            "output_dir": str(self.output_dir) if self.output_dir else None,
            "adapter": self.adapter_spec,
            "adapter_layers": self.adapter_layers,
            "adapter_dim": self.adapter_dim,
            "checkpoint": self.checkpoint,
            "k": self.k,
            "split_seed": self.split_seed,
            "layers": list(self.layers) if self.layers is not None else "all",
            "aggregation": self.aggregation_mode,
            "train": {
                "initial_lr": self.train.initial_lr,
                "decay_gamma": self.train.decay_gamma,
                "decay_every_epochs": self.train.decay_every_epochs,
                "early_stop_patience": self.train.early_stop_patience,
                "max_epochs": self.train.max_epochs,
                "batch_size": self.train.batch_size,
                "seed": self.train.seed,
            },
        }


def parse_layers(value) -> tuple[int, ...] | None:
    """Parses "all", a list of ints, or a string like "1,4-8,13"."""
    if value is None or value == "all":
        return None
    if isinstance(value, (list, tuple)):
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"layers: expected integers, got {value!r}") from None
    if isinstance(value, int):
        return (value,)
    if isinstance(value, str):
        selected: list[int] = []
        for chunk in value.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            if "-" in chunk:
                lo, _, hi = chunk.partition("-")
                try:
                    selected.extend(range(int(lo), int(hi) + 1))
                except ValueError:
                    raise ConfigError(f"layers: bad range {chunk!r}") from None
            else:
                try:
                    selected.append(int(chunk))
                except ValueError:
                    raise ConfigError(f"layers: bad index {chunk!r}") from None
        if not selected:
            raise ConfigError(f"layers: nothing selected in {value!r}")
        return tuple(selected)
    raise ConfigError(f"layers: unsupported value {value!r}")


_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
_TOP_LEVEL_FIELDS = {
    "manifest", "cache_dir", "output_dir", "adapter", "adapter_layers", "adapter_dim",
    "checkpoint", "k", "split_seed", "layers", "aggregation", "train",
}


def load_experiment_config(path: Path | str) -> ExperimentConfig:
    """Loads a config file, reporting unknown or ill-typed fields by name."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(data) - _TOP_LEVEL_FIELDS
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")

    base = path.resolve().parent

    def as_path(name: str) -> Path | None:
        raw = data.get(name)
        if raw is None:
            return None
        p = Path(str(raw))
        return p if p.is_absolute() else base / p

    def as_int(name: str, default: int) -> int:
        raw = data.get(name, default)
        if not isinstance(raw, int):
            raise ConfigError(f"{path}: field {name!r} must be an integer, got {raw!r}")
        return raw

    aggregation = data.get("aggregation", AggregationMode.POOLED_SPEAKERS)
    if aggregation not in AggregationMode.ALL:
        raise ConfigError(
            f"{path}: aggregation must be one of {AggregationMode.ALL}, got {aggregation!r}"
        )

    train_raw = data.get("train", {})
    if not isinstance(train_raw, dict):
        raise ConfigError(f"{path}: field 'train' must be a mapping")
    unknown = set(train_raw) - _TRAIN_FIELDS
    if unknown:
        raise ConfigError(f"{path}: unknown train fields {sorted(unknown)}")
    try:
        train_config = TrainConfig(**train_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: train: {exc}") from None

    return ExperimentConfig(
        manifest_path=as_path("manifest"),
        cache_dir=as_path("cache_dir"),
        output_dir=as_path("output_dir"),
        adapter_spec=data.get("adapter"),
        adapter_layers=as_int("adapter_layers", 24),
        adapter_dim=as_int("adapter_dim", 64),
        checkpoint=data.get("checkpoint"),
        k=as_int("k", 10),
        split_seed=as_int("split_seed", 0),
        layers=parse_layers(data.get("layers")),
        aggregation_mode=aggregation,
        train=train_config,
    )


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Returns a copy with every non-None override applied; flags win over file."""
    train = config.train
    train_updates = {k: v for k, v in overrides.pop("train", {}).items() if v is not None}
    if train_updates:
        train = replace(train, **train_updates)
    updates = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, train=train, **updates)


def resolve_cache_dir(config: ExperimentConfig) -> ExperimentConfig:
    if config.cache_dir is None and os.environ.get(CACHE_ENV_VAR):
        return replace(config, cache_dir=Path(os.environ[CACHE_ENV_VAR]))
    return config


def config_snapshot_yaml(config: ExperimentConfig) -> str:
    """Fully resolved settings, written into the output directory per run."""
    return yaml.safe_dump(config.to_mapping(), sort_keys=False)
