"""Run configuration: a JSON file, then command-line overrides.

Schema (every key optional; defaults shown by ``egocast show-config``)::

    {
      "seed": 0,
      "run_dir": "runs/default",
      "skeleton": "body17",
      "data": {"train": "data/train.jsonl", "test": "data/test.jsonl"},
      "generator": {"sequences_per_archetype": 4, "test_sequences_per_archetype": 2,
                    "duration_s": 10.0, "fps": 30.0, "archetypes": ["stand", "walk", "reach"]},
      "provider": {"kind": "informative", "noise_sigma": 0.05, "frame": "headset"},
      "estimator": {EstimatorConfig fields},
      "forecaster": {ForecastConfig fields},
      "loss_weights": {"pose": 1.0, "translation": 1.0, "rotation": 1.0},
      "metrics": {"horizons": [0.5, 1, 2, 3, 4, 5], "anchor_stride": 30, "fps": 30.0}
    }

``seed`` and ``skeleton`` are propagated into the model, generator and
provider sections; the provider dimension always equals
``estimator.visual_dim``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from egocast.estimator import EstimatorConfig
from egocast.forecaster import ForecastConfig, LossWeights
from egocast.metrics import DEFAULT_HORIZONS
from egocast.synth import GeneratorConfig
from egocast.tensor import ConfigurationError


@dataclass
class DataPaths:
    train: str = "data/train.jsonl"
    test: str = "data/test.jsonl"


@dataclass
class ProviderSettings:
    kind: str = "informative"
    noise_sigma: float = 0.05
    frame: str = "headset"


@dataclass
class MetricSettings:
    horizons: tuple[float, ...] = DEFAULT_HORIZONS
    anchor_stride: int = 30
    fps: float = 30.0


@dataclass
class RunConfig:
    seed: int = 0
    run_dir: str = "runs/default"
    skeleton: str = "body17"
    data: DataPaths = field(default_factory=DataPaths)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    forecaster: ForecastConfig = field(default_factory=ForecastConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    metrics: MetricSettings = field(default_factory=MetricSettings)

    def finalize(self) -> "RunConfig":
        """Propagate shared settings and check invariants; returns self."""
        for section in (self.estimator, self.forecaster):
            section.seed = self.seed
            section.skeleton = self.skeleton
        self.generator.seed = self.seed
        self.generator.skeleton = self.skeleton
        self.generator.archetypes = tuple(self.generator.archetypes)
        self.metrics.horizons = tuple(float(h) for h in self.metrics.horizons)
        h = self.metrics.horizons
        if not h or any(b <= a for a, b in zip(h, h[1:])):
            raise ConfigurationError(f"metric horizons must be non-empty and ascending, got {list(h)}")
        if self.provider.kind not in ("informative", "null"):
            raise ConfigurationError(f"unknown provider kind {self.provider.kind!r}")
        self.estimator.validate()
        self.forecaster.validate()
        LossWeights(self.loss_weights.pose, self.loss_weights.translation, self.loss_weights.rotation)
        return self

    def to_json(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def use_full_scale(self) -> None:
        e, f = EstimatorConfig.full_scale(), ForecastConfig.full_scale()
        for name in ("k", "d", "layers", "heads", "head_hidden", "visual_dim", "iterations"):
            setattr(self.estimator, name, getattr(e, name))
        for name in ("k", "n", "d", "layers", "heads", "head_hidden", "iterations"):
            setattr(self.forecaster, name, getattr(f, name))


_SECTIONS = {
    "data": DataPaths,
    "generator": GeneratorConfig,
    "provider": ProviderSettings,
    "estimator": EstimatorConfig,
    "forecaster": ForecastConfig,
    "loss_weights": LossWeights,
    "metrics": MetricSettings,
}


def config_from_dict(obj: dict) -> RunConfig:
    cfg = RunConfig()
    unknown = set(obj) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    for key, value in obj.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"config section {key!r} must be an object")
            current = dataclasses.asdict(getattr(cfg, key))
            bad = set(value) - set(current)
            if bad:
                raise ConfigurationError(f"unknown keys in {key!r}: {sorted(bad)}")
            current.update(value)
            try:
                setattr(cfg, key, _SECTIONS[key](**current))
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"invalid {key!r} section: {exc}") from None
        else:
            setattr(cfg, key, value)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    return config_from_dict(obj)
