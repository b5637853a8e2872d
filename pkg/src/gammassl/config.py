"""Experiment configuration: dataclasses, YAML round-trip and domain presets."""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datagen import DEFAULT_PALETTE, ClassAppearance, DomainShift, DomainSpec, sample_seed
from .errors import ConfigError
from .nnet import ModelConfig


def derive_seed(seed: int, name: str) -> int:
    """Named sub-seed so data, init, masking and dropout streams vary independently."""
    return sample_seed(seed, zlib.crc32(name.encode()))


@dataclass(frozen=True)
class DomainPreset:
    hue: float = 0.0
    brightness: float = 0.0
    noise_sigma: float = 0.02
    ood_rate: float = 0.0
    seed: int = 0


DOMAIN_PRESETS = {
    "source": DomainPreset(hue=0.0, brightness=0.0, noise_sigma=0.02, ood_rate=0.0, seed=11),
    "near": DomainPreset(hue=0.35, brightness=0.05, noise_sigma=0.05, ood_rate=0.25, seed=23),
    "far": DomainPreset(hue=0.9, brightness=-0.12, noise_sigma=0.10, ood_rate=0.5, seed=37),
}


@dataclass(frozen=True)
class TaskConfig:
    steps: int = 1500
    batch_size: int = 8
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        _positive(self, "batch_size", "learning_rate")
        if self.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum", "must be in [0, 1)")


@dataclass(frozen=True)
class UncertTrainConfig:
    p_mask: float = 0.5
    temperature: float = 0.5
    consistency_weight: float = 1.0
    steps: int = 600
    batch_size: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    augment: str = "mask"  # "mask" or "candr"
    jitter: str = "full"
    crop_scale: tuple[float, float] = (0.5, 1.0)

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ConfigError("temperature", "must be > 0")
        _positive(self, "batch_size", "learning_rate")
        if self.consistency_weight < 0:
            raise ConfigError("consistency_weight", "must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        if not 0.0 <= self.p_mask <= 1.0:
            raise ConfigError("p_mask", "must be in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum", "must be in [0, 1)")
        if self.augment not in ("mask", "candr"):
            raise ConfigError("augment", f"unknown augmentation {self.augment!r}")
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError("crop_scale", "need 0 < lo <= hi <= 1")

    def task_config(self) -> TaskConfig:
        return TaskConfig(self.steps, self.batch_size, self.learning_rate, self.momentum, self.seed)


def _positive(cfg, *names: str) -> None:
    for name in names:
        if not getattr(cfg, name) > 0:
            raise ConfigError(name, "must be positive")


@dataclass(frozen=True)
class VariantConfig:
    """One uncertainty-trained model: init family plus augmentation overrides."""

    name: str
    init: str = "general"  # "general" or "narrow"
    augment: str = "mask"
    p_mask: float = 0.5
    jitter: str = "full"
    crop_scale: tuple[float, float] = (0.5, 1.0)


@dataclass(frozen=True)
class DataConfig:
    domains: dict = field(default_factory=lambda: dict(DOMAIN_PRESETS))
    source: str = "source"
    targets: tuple[str, ...] = ("near", "far")
    train_count: int = 256
    test_count: int = 64
    num_classes: int = 6
    height: int = 64
    width: int = 64
    patch_size: int = 8

    def domain_spec(self, name: str, global_seed: int = 0) -> DomainSpec:
        if name not in self.domains:
            raise ConfigError("data.domains", f"unknown domain {name!r}")
        p = self.domains[name]
        return DomainSpec(
            domain_id=name,
            num_classes_known=self.num_classes,
            palette=DEFAULT_PALETTE[: self.num_classes]
            if self.num_classes <= len(DEFAULT_PALETTE)
            else _extended_palette(self.num_classes),
            shift=DomainShift(p.hue, p.brightness, p.noise_sigma),
            ood_rate=p.ood_rate,
            seed=sample_seed(derive_seed(global_seed, "data"), p.seed),
            height=self.height,
            width=self.width,
            patch_size=self.patch_size,
        )


def _extended_palette(k: int) -> tuple[ClassAppearance, ...]:
    extra = [
        ClassAppearance(((0.13 * i) % 1.0, (0.37 * i) % 1.0, (0.71 * i) % 1.0), 0.2)
        for i in range(len(DEFAULT_PALETTE), k)
    ]
    return DEFAULT_PALETTE + tuple(extra)


@dataclass(frozen=True)
class BaselineConfig:
    ensemble_size: int = 3
    mcd_samples: int = 8


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TaskConfig = field(default_factory=lambda: TaskConfig(steps=1500))
    task: TaskConfig = field(default_factory=TaskConfig)
    uncert: UncertTrainConfig = field(default_factory=UncertTrainConfig)
    variants: tuple[VariantConfig, ...] = (
        VariantConfig("mask-d2"),
        VariantConfig("mask-d1", init="narrow"),
    )
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    eval_domains: tuple[str, ...] = ("source", "near", "far")
    output_dir: str = "runs/default"

    def validate(self) -> None:
        for name in (self.data.source, *self.data.targets, *self.eval_domains):
            self.data.domain_spec(name, self.seed).validate()
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError("model.num_classes", "must equal data.num_classes")
        if (self.model.height, self.model.width, self.model.patch_size) != (
            self.data.height, self.data.width, self.data.patch_size
        ):
            raise ConfigError("model", "image geometry must match data section")
        self.model.validate()
        self.pretrain.validate()
        self.task.validate()
        self.uncert.validate()
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("variants", "duplicate variant names")
        for v in self.variants:
            if v.init not in ("general", "narrow"):
                raise ConfigError(f"variants.{v.name}.init", f"unknown init {v.init!r}")
            self.variant_uncert(v).validate()
        if self.baselines.ensemble_size < 1 or self.baselines.mcd_samples < 1:
            raise ConfigError("baselines", "ensemble_size and mcd_samples must be >= 1")

    def variant_uncert(self, v: VariantConfig) -> UncertTrainConfig:
        return dataclasses.replace(
            self.uncert,
            augment=v.augment,
            p_mask=v.p_mask,
            jitter=v.jitter,
            crop_scale=tuple(v.crop_scale),
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)


# -- serialization -----------------------------------------------------------

_NESTED = {
    ExperimentConfig: {
        "data": DataConfig,
        "model": ModelConfig,
        "pretrain": TaskConfig,
        "task": TaskConfig,
        "uncert": UncertTrainConfig,
        "baselines": BaselineConfig,
    },
}


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}".lstrip("."), "unknown key")
    kwargs = {}
    for name, value in raw.items():
        key = f"{path}.{name}".lstrip(".")
        nested = _NESTED.get(cls, {}).get(name)
        if nested is not None:
            kwargs[name] = _build(nested, value, key)
        elif cls is ExperimentConfig and name == "variants":
            kwargs[name] = tuple(_build(VariantConfig, v, f"{key}[{i}]") for i, v in enumerate(value))
        elif cls is DataConfig and name == "domains":
            if not isinstance(value, dict):
                raise ConfigError(key, "expected a mapping of domain presets")
            kwargs[name] = {k: _build(DomainPreset, v, f"{key}.{k}") for k, v in value.items()}
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw or {}, "")
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _to_plain(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=None)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"unparseable config: {exc}") from None
    return config_from_dict(raw or {})
