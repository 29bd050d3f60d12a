"""
Pipeline configuration.

One YAML file holds every setting; command line flags win over it. Keys map
one to one onto the dataclasses below and unknown keys are rejected, e.g.

    seed: 7
    dataset:
      preset: farm-a
      n_samples: 20000
    features:
      window: 16
    models:
      lstm:
        max_epochs: 10
        architecture: {hidden: 32, seq_len: 16}
    ensemble:
      percentile: 97
      weights: learned

`--set models.vae.lr=0.01` overrides a single dotted key; the value is
parsed as YAML.
"""
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, get_type_hints
import typing

import yaml

from turbinewatch import rng
from turbinewatch.dataset import SplitSpec
from turbinewatch.ensemble import DEFAULT_PERCENTILE, WeightMode, validate_weights
from turbinewatch.exceptions import ConfigurationException
from turbinewatch.features import FeatureConfig
from turbinewatch.importance import ImportanceUnit
from turbinewatch.metrics import DEFAULT_HORIZON_HOURS, DEFAULT_LEAD_WINDOWS_HOURS
from turbinewatch.models import ModelKind
from turbinewatch.synth import PRESETS, SynthConfig
from turbinewatch.training import MODEL_STREAMS, TrainConfig


@dataclass
class DatasetSettings:
    preset: str = "farm-a"
    n_samples: int = 20000
    n_channels: Optional[int] = None
    n_events: int = 6
    precursor_hours: float = 48.0
    drift_channels_frac: float = 0.5
    noise_sigma: float = 1.0
    step_seconds: int = 600
    csv: Optional[str] = None
    events_csv: Optional[str] = None

    def synth_config(self, seed: int) -> SynthConfig:
        if self.n_channels is None and self.preset not in PRESETS:
            raise ConfigurationException(
                f"unknown preset {self.preset!r}, expected one of {sorted(PRESETS)}"
            )
        cfg = SynthConfig(
            n_samples=self.n_samples,
            n_channels=self.n_channels or PRESETS[self.preset],
            step_seconds=self.step_seconds,
            n_events=self.n_events,
            precursor_hours=self.precursor_hours,
            drift_channels_frac=self.drift_channels_frac,
            noise_sigma=self.noise_sigma,
            seed=seed,
        )
        cfg.validate()
        return cfg


@dataclass
class ModelSettings:
    max_epochs: int = 20
    batch_size: int = 64
    patience: int = 3
    lr: float = 1e-3
    architecture: Dict[str, Any] = field(default_factory=dict)

    def train_config(self, seed: int, kind: ModelKind) -> TrainConfig:
        cfg = TrainConfig(
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            patience=self.patience,
            lr=self.lr,
            seed=rng.derive_seed(seed, rng.TRAINING, MODEL_STREAMS[kind]),
        )
        cfg.validate()
        return cfg


@dataclass
class ModelsSettings:
    vae: ModelSettings = field(default_factory=ModelSettings)
    lstm: ModelSettings = field(default_factory=ModelSettings)
    transformer: ModelSettings = field(default_factory=ModelSettings)

    def get(self, kind: ModelKind) -> ModelSettings:
        return getattr(self, kind.value)


@dataclass
class EnsembleSettings:
    percentile: float = DEFAULT_PERCENTILE
    weights: str = WeightMode.learned.value
    fixed_weights: Optional[List[float]] = None
    inject_anomalies: bool = False

    @property
    def mode(self) -> WeightMode:
        try:
            return WeightMode(self.weights)
        except ValueError:
            raise ConfigurationException(
                f"ensemble.weights must be one of {[m.value for m in WeightMode]}, got {self.weights!r}"
            )

    def validate(self):
        if not 90 <= self.percentile <= 99.9:
            raise ConfigurationException(f"ensemble.percentile must be in [90, 99.9], got {self.percentile}")
        if self.mode == WeightMode.fixed:
            if self.fixed_weights is None:
                raise ConfigurationException("ensemble.weights is fixed but fixed_weights is missing")
            validate_weights(self.fixed_weights)


@dataclass
class EvaluationSettings:
    lead_windows_hours: List[float] = field(default_factory=lambda: list(DEFAULT_LEAD_WINDOWS_HOURS))
    horizon_hours: float = DEFAULT_HORIZON_HOURS
    importance: str = ImportanceUnit.column.value
    top_k: int = 5

    @property
    def importance_unit(self) -> Optional[ImportanceUnit]:
        if self.importance == "off":
            return None
        try:
            return ImportanceUnit(self.importance)
        except ValueError:
            raise ConfigurationException(
                f"evaluation.importance must be column, channel or off, got {self.importance!r}"
            )

    def validate(self):
        self.importance_unit
        if self.horizon_hours <= 0:
            raise ConfigurationException("evaluation.horizon_hours must be positive")
        if self.top_k < 1:
            raise ConfigurationException("evaluation.top_k must be >= 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    split: SplitSpec = field(default_factory=SplitSpec)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    models: ModelsSettings = field(default_factory=ModelsSettings)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigurationException("seed must be a 64 bit unsigned integer")
        if self.jobs < 1:
            raise ConfigurationException("jobs must be >= 1")
        self.split.validate()
        self.features.validate()
        self.ensemble.validate()
        self.evaluation.validate()
        for kind in ModelKind:
            self.models.get(kind).train_config(self.seed, kind)


def _coerce(value: Any, kind: Any, path: str) -> Any:
    origin = typing.get_origin(kind)
    args = typing.get_args(kind)

    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)

    if is_dataclass(kind):
        return _build(kind, value, path)

    if kind is Any:
        return value

    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigurationException(f"{path}: expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]

    if origin in (dict, Dict):
        if not isinstance(value, dict):
            raise ConfigurationException(f"{path}: expected a mapping, got {value!r}")
        return dict(value)

    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationException(f"{path}: expected true or false, got {value!r}")
        return value

    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationException(f"{path}: expected an integer, got {value!r}")
        return value

    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationException(f"{path}: expected a number, got {value!r}")
        return float(value)

    if kind is str:
        if not isinstance(value, str):
            raise ConfigurationException(f"{path}: expected a string, got {value!r}")
        return value

    raise ConfigurationException(f"{path}: unsupported setting type {kind}")


def _build(cls: Any, data: Any, path: str = "") -> Any:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigurationException(f"{path or 'config'}: expected a mapping, got {data!r}")

    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        prefix = f"{path}." if path else ""
        raise ConfigurationException(f"unknown config key {prefix}{unknown[0]}")

    kwargs = {
        name: _coerce(value, hints[name], f"{path}.{name}" if path else name)
        for name, value in data.items()
    }
    return cls(**kwargs)


def apply_override(raw: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """Sets `dotted.key=value` in a nested mapping, in place."""
    key, sep, text = assignment.partition("=")
    if not sep or not key:
        raise ConfigurationException(f"--set expects dotted.key=value, got {assignment!r}")

    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationException(f"--set {key}: {e}")

    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationException(f"--set {key}: {part} is not a section")
        node = child
    node[parts[-1]] = value
    return raw


def load_config(
    text: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> PipelineConfig:
    try:
        raw = yaml.safe_load(text) if text else {}
    except yaml.YAMLError as e:
        raise ConfigurationException(f"config file is not valid YAML: {e}")

    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationException("config file must hold a mapping")

    for assignment in overrides:
        apply_override(raw, assignment)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out

    config = _build(PipelineConfig, raw)
    config.validate()
    return config
