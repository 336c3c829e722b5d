"""Experiment configuration: a single JSON document, strictly validated.

Sections: ``dataset``, ``split``, ``noise``, ``augment``, ``model``,
``train`` (a ``TrainConfig``), plus top-level ``seeds``, ``output_dir`` and
the optional ``methods`` list (defaults to ``[train.method]``) and
``parallel_seeds`` flag. Unknown keys are rejected.
"""

import copy
import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .data import AugmentationSpec
from .errors import ConfigError, ParameterError
from .trainer import METHODS, TrainConfig


@dataclass
class DatasetConfig:
    source: str  # "synth", "csv" or "idx"
    kind: str = "blobs"
    n: int = 4000
    classes: int = 4
    dim: int = 32
    noise: float = 0.4
    center_scale: float = 0.25
    seed: int = 0
    path: str = None
    labels_path: str = None
    test_path: str = None
    test_labels_path: str = None
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.source not in ("synth", "csv", "idx"):
            raise ConfigError("dataset.source must be 'synth', 'csv' or 'idx'")
        if self.source != "synth" and not self.path:
            raise ConfigError("dataset.path is required for file sources")
        if self.source == "synth" and self.kind not in ("blobs", "moons"):
            raise ConfigError("dataset.kind must be 'blobs' or 'moons'")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")
        if self.n < 1 or self.classes < 1 or self.dim < 1 or self.noise < 0 or self.center_scale <= 0:
            raise ConfigError("dataset sizes must be positive and noise non-negative")


@dataclass
class SplitConfig:
    labels_per_class: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.labels_per_class < 1:
            raise ConfigError("split.labels_per_class must be >= 1")


@dataclass
class NoiseConfig:
    mapping: dict = field(default_factory=dict)
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError("noise.rate must lie in [0, 1]")
        try:
            self.mapping = {int(k): int(v) for k, v in self.mapping.items()}
        except (TypeError, ValueError):
            raise ConfigError("noise.mapping must map class indices to class indices") from None
        if any(k == v for k, v in self.mapping.items()):
            raise ConfigError("noise.mapping must not map a class to itself")


@dataclass
class ModelConfig:
    hidden: int = 128
    feature_dim: int = 64

    def __post_init__(self):
        if self.hidden < 1 or self.feature_dim < 1:
            raise ConfigError("model widths must be >= 1")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    split: SplitConfig
    train: TrainConfig
    seeds: list
    output_dir: str
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    methods: list = None
    parallel_seeds: bool = False

    def __post_init__(self):
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if self.methods is None:
            self.methods = [self.train.method]
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be a non-empty list drawn from {METHODS}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["noise"]["mapping"] = {str(k): v for k, v in self.noise.mapping.items()}
        if d["augment"]["grid_shape"] is not None:
            d["augment"]["grid_shape"] = list(d["augment"]["grid_shape"])
        return d


_SECTIONS = {
    "dataset": DatasetConfig,
    "split": SplitConfig,
    "noise": NoiseConfig,
    "augment": AugmentationSpec,
    "model": ModelConfig,
    "train": TrainConfig,
}


def _check_type(path, value, hint):
    origin = typing.get_origin(hint)
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif hint is str:
        ok = value is None or isinstance(value, str)
    elif hint is dict or origin is dict:
        ok = isinstance(value, dict)
    elif hint is list or origin is list:
        ok = isinstance(value, list)
    elif hint is tuple:
        ok = value is None or isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {getattr(hint, '__name__', hint)}, got {type(value).__name__}")


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"unknown key {prefix}.{unknown[0]}")
    kwargs = {}
    for name, f in names.items():
        path = f"{prefix}.{name}"
        if name not in raw:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"missing required key {path}")
            continue
        value = raw[name]
        _check_type(path, value, hints[name])
        if hints[name] is float and value is not None:
            value = float(value)
        if name == "grid_shape" and value is not None:
            value = tuple(int(v) for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"{prefix}: {e}") from None
    except ParameterError as e:
        raise ConfigError(f"{prefix}: {e}") from None


def from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    for key in ("dataset", "split", "train", "seeds", "output_dir"):
        if key not in raw:
            raise ConfigError(f"missing required key {key}")
    kwargs = {name: _build(cls, raw[name], name) for name, cls in _SECTIONS.items() if name in raw}
    for key in ("seeds", "methods"):
        if key in raw and raw[key] is not None and not isinstance(raw[key], list):
            raise ConfigError(f"{key}: expected a list")
    if not isinstance(raw["output_dir"], str):
        raise ConfigError("output_dir: expected a string")
    if "parallel_seeds" in raw and not isinstance(raw["parallel_seeds"], bool):
        raise ConfigError("parallel_seeds: expected a boolean")
    try:
        return ExperimentConfig(
            seeds=raw["seeds"],
            output_dir=raw["output_dir"],
            methods=raw.get("methods"),
            parallel_seeds=raw.get("parallel_seeds", False),
            **kwargs,
        )
    except ParameterError as e:
        raise ConfigError(str(e)) from None


def apply_overrides(raw, overrides):
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return raw


def load_config(path, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return from_dict(apply_overrides(raw, overrides))
