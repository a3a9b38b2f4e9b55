"""Experiment configuration: a YAML document validated against fixed sections.

See ``docs/config_schema.md`` for the schema.  Unknown keys are rejected;
omitted keys take defaults (hyperparameters default to the DVS128 Gesture
column of the reference setting: u_th=0.3, leak=0.3, r=16, lr=1e-4,
batch 36, 100 epochs).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError
from .network import NetworkSpec, format_layers, parse_layers
from .neurons import NeuronConfig
from .seeding import derive_seed
from .synth_data import SynthConfig
from .training import EvalConfig, TrainConfig

DEFAULT_STRUCTURE = "Input-MP4-16C3-AP2-32C3-AP2-3"


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    path: str | None = None
    train_fraction: float = 2 / 3
    synth: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "directory"):
            raise ConfigurationError("data.source: must be 'synthetic' or 'directory'")
        if self.source == "directory" and not self.path:
            raise ConfigurationError("data.path: required when data.source is 'directory'")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("data.train_fraction: must lie in (0, 1)")


@dataclass(frozen=True)
class AggregationSection:
    dt_us: int = 2000
    T: int = 50

    def __post_init__(self) -> None:
        if self.dt_us < 1 or self.T < 1:
            raise ConfigurationError("aggregation: need dt_us >= 1 and T >= 1")


@dataclass(frozen=True)
class NetworkSection:
    structure: str = DEFAULT_STRUCTURE
    input_shape: tuple | None = None
    n_classes: int | None = None
    strategy: str = "S3"
    bias: bool = True
    dtype: str = "float64"

    def __post_init__(self) -> None:
        parse_layers(self.structure)
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))


@dataclass(frozen=True)
class AttentionSection:
    r: float = 16
    d_th: float = 0.0
    hidden_width: str = "ceil"

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ConfigurationError("attention.r: must be > 0")
        if not self.d_th >= 0:
            raise ConfigurationError("attention.d_th: must be >= 0")
        if self.hidden_width not in ("ceil", "floor"):
            raise ConfigurationError("attention.hidden_width: must be 'ceil' or 'floor'")


@dataclass(frozen=True)
class EvalSection:
    n_crops: int = 10
    pruning: str = "none"
    proportion: float = 0.0
    irp_seeds: int = 5

    def __post_init__(self) -> None:
        EvalConfig(self.n_crops, self.pruning, self.proportion)
        if self.irp_seeds < 1:
            raise ConfigurationError("eval.irp_seeds: must be >= 1")


_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "seed"]
_SYNTH_KEYS = [f.name for f in fields(SynthConfig) if f.name != "seed"]

SECTIONS = {
    "data": DataSection,
    "aggregation": AggregationSection,
    "network": NetworkSection,
    "neuron": NeuronConfig,
    "attention": AttentionSection,
    "train": TrainConfig,
    "eval": EvalSection,
}
TOP_LEVEL = ("seed", "threads") + tuple(SECTIONS)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    threads: int = 1
    data: DataSection = field(default_factory=DataSection)
    aggregation: AggregationSection = field(default_factory=AggregationSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    attention: AttentionSection = field(default_factory=AttentionSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- derived objects ------------------------------------------------------

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.data.synth, seed=derive_seed(self.seed, "data"))

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=derive_seed(self.seed, "train"))

    def eval_config(self, **overrides) -> EvalConfig:
        kw = dict(n_crops=self.eval.n_crops, pruning=self.eval.pruning, proportion=self.eval.proportion)
        kw.update(overrides)
        return EvalConfig(**kw)

    def network_spec(self, input_shape=None, n_classes=None, **overrides) -> NetworkSpec:
        net = self.network
        if input_shape is None:
            input_shape = net.input_shape
        if input_shape is None:
            if self.data.source != "synthetic":
                raise ConfigurationError("network.input_shape: required for directory data")
            sc = self.synth_config()
            input_shape = (2, sc.height, sc.width)
        if n_classes is None:
            n_classes = net.n_classes or (self.synth_config().n_classes if self.data.source == "synthetic" else None)
        if n_classes is None:
            raise ConfigurationError("network.n_classes: required for directory data")
        kw = dict(input_shape=tuple(input_shape), layers=parse_layers(net.structure), T=self.aggregation.T,
                  n_classes=int(n_classes), neuron=self.neuron, strategy=net.strategy, r=self.attention.r,
                  hidden_width=self.attention.hidden_width, d_th=self.attention.d_th,
                  dt_us=self.aggregation.dt_us, bias=net.bias, dtype=net.dtype,
                  seed=derive_seed(self.seed, "init"))
        kw.update(overrides)
        return NetworkSpec(**kw)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"seed": self.seed, "threads": self.threads}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            if name == "train":
                sec.pop("seed")
            if name == "network" and sec["input_shape"] is not None:
                sec["input_shape"] = list(sec["input_shape"])
            out[name] = sec
        return out


def _build_section(name: str, cls, raw) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{name}: expected a mapping, got {type(raw).__name__}")
    allowed = _TRAIN_KEYS if cls is TrainConfig else [f.name for f in fields(cls)]
    for key in raw:
        if key not in allowed:
            raise ConfigurationError(f"{name}.{key}: unknown key")
    if cls is DataSection and "synth" in raw:
        synth = raw["synth"] or {}
        if not isinstance(synth, dict):
            raise ConfigurationError("data.synth: expected a mapping")
        for key in synth:
            if key not in _SYNTH_KEYS:
                raise ConfigurationError(f"data.synth.{key}: unknown key")
        try:
            SynthConfig(**synth)
        except (ConfigurationError, TypeError) as exc:
            raise ConfigurationError(f"data.synth: {exc}") from None
    try:
        return cls(**raw)
    except ConfigurationError as exc:
        msg = str(exc)
        if msg.startswith(name):
            raise
        for key in allowed:
            if msg.startswith(key + " "):
                raise ConfigurationError(f"{name}.{msg}") from None
        raise ConfigurationError(f"{name}: {msg}") from None
    except TypeError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


def resolve(raw: dict | None) -> ExperimentConfig:
    raw = dict(raw or {})
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigurationError(f"{key}: unknown key")
    for key in ("seed", "threads"):
        if key in raw and (not isinstance(raw[key], int) or isinstance(raw[key], bool) or raw[key] < 0):
            raise ConfigurationError(f"{key}: must be a nonnegative integer")
    if raw.get("threads", 1) < 1:
        raise ConfigurationError("threads: must be >= 1")
    sections = {name: _build_section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    return ExperimentConfig(seed=raw.get("seed", 0), threads=raw.get("threads", 1), **sections)


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return resolve(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# NetworkSpec serialisation (checkpoints)


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "structure": format_layers(spec.layers),
        "T": spec.T,
        "n_classes": spec.n_classes,
        "neuron": dataclasses.asdict(spec.neuron),
        "strategy": spec.strategy,
        "r": spec.r,
        "hidden_width": spec.hidden_width,
        "d_th": spec.d_th,
        "dt_us": spec.dt_us,
        "bias": spec.bias,
        "dtype": spec.dtype,
        "seed": spec.seed,
    }


def spec_from_dict(d: dict) -> NetworkSpec:
    d = dict(d)
    d["layers"] = parse_layers(d.pop("structure"))
    d["neuron"] = NeuronConfig(**d["neuron"])
    return NetworkSpec(**d)
