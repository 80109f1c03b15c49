"""Experiment configuration: YAML in, validated dataclasses out.

Every problem is reported as a :class:`~fedsim.exceptions.ConfigError`
carrying the dotted path of the offending field (``client.batch_size``).
:func:`dump_config` writes a config that :func:`parse_config` reads back
to an equal object.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .aggregators import ClipNoiseAggregator, MeanAggregator, QuantizeAggregator
from .exceptions import ConfigError
from .metrics import METRICS
from .models import ACTIVATIONS
from .optimizers import OPTIMIZERS
from .runner import parse_backend
from .synthetic import SIZE_DISTRIBUTIONS, TASKS, SyntheticFedSpec

__all__ = [
    "AggregatorConfig",
    "BenchConfig",
    "ClientConfig",
    "DatasetConfig",
    "ExperimentConfig",
    "ModelConfig",
    "ServerConfig",
    "dump_config",
    "load_config",
    "parse_config",
]

MODEL_KINDS = ("linear", "logistic", "mlp")
ALGORITHMS = ("fed_avg", "fed_opt")
AGGREGATORS = (MeanAggregator.name, QuantizeAggregator.name, ClipNoiseAggregator.name)


@dataclass(frozen=True)
class DatasetConfig:
    path: Optional[str] = None
    synthetic: Optional[SyntheticFedSpec] = None
    eval_path: Optional[str] = None


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "linear"
    num_features: Optional[int] = None
    num_classes: Optional[int] = None
    hidden: list[int] = field(default_factory=list)
    activation: str = "tanh"
    use_bias: bool = False
    init_value: Optional[float] = None


@dataclass(frozen=True)
class ClientConfig:
    batch_size: int = 10
    num_epochs: int = 1
    lr: float = 0.1


@dataclass(frozen=True)
class ServerConfig:
    lr: float = 1.0
    optimizer: str = "sgd"
    b1: Optional[float] = None
    b2: Optional[float] = None
    eps: Optional[float] = None

    def optimizer_options(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("b1", "b2", "eps") if getattr(self, k) is not None}


@dataclass(frozen=True)
class AggregatorConfig:
    kind: str = "mean"
    num_levels: Optional[int] = None
    clip_norm: Optional[float] = None
    noise_stddev: float = 0.0


@dataclass(frozen=True)
class BenchConfig:
    cohort_sizes: list[int] = field(default_factory=lambda: [1, 8, 64])
    backends: list[str] = field(default_factory=lambda: ["sequential", "parallel:8"])
    warmup_rounds: int = 2
    measured_rounds: int = 10
    device_latency_ms: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    dataset: DatasetConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    algorithm: str = "fed_avg"
    client: ClientConfig = field(default_factory=ClientConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    clients_per_round: int = 10
    rounds: int = 100
    eval_every: int = 0
    eval_batch_size: int = 32
    metrics: list[str] = field(default_factory=list)
    backend: str = "sequential"
    output_dir: str = "out"
    bench: BenchConfig = field(default_factory=BenchConfig)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if origin is list:
        (item_tp,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return [_coerce(item_tp, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if value is None:
        raise ConfigError(path, "must not be null")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e-3" as a string
            try:
                return float(value)
            except ValueError:
                raise ConfigError(path, f"expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config type {tp!r} at {path}")  # pragma: no cover


def _build(cls, data: Any, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(_join(path, str(unknown[0])), "unknown field")
    kwargs = {}
    for name, f in known.items():
        fpath = _join(path, name)
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(fpath, "required field is missing")
            continue
        kwargs[name] = _coerce(hints[name], data[name], fpath)
    return cls(**kwargs)


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _one_of(value: str, choices, path: str) -> None:
    _check(value in choices, path, f"must be one of {sorted(choices)}, got {value!r}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    ds = cfg.dataset
    _check((ds.path is None) != (ds.synthetic is None), "dataset", "set exactly one of path / synthetic")
    if ds.synthetic is not None:
        syn = ds.synthetic
        _check(syn.num_clients >= 1, "dataset.synthetic.num_clients", "must be >= 1")
        _one_of(syn.task, TASKS, "dataset.synthetic.task")
        _one_of(syn.size_distribution, SIZE_DISTRIBUTIONS, "dataset.synthetic.size_distribution")
    m = cfg.model
    _one_of(m.kind, MODEL_KINDS, "model.kind")
    _one_of(m.activation, ACTIVATIONS, "model.activation")
    if m.kind == "mlp":
        _check(len(m.hidden) >= 1, "model.hidden", "mlp needs at least one hidden layer")
    _check(all(h >= 1 for h in m.hidden), "model.hidden", "layer sizes must be >= 1")
    _one_of(cfg.algorithm, ALGORITHMS, "algorithm")
    _check(cfg.client.batch_size >= 1, "client.batch_size", "must be >= 1")
    _check(cfg.client.num_epochs >= 1, "client.num_epochs", "must be >= 1")
    _check(cfg.client.lr >= 0, "client.lr", "must be >= 0")
    _one_of(cfg.server.optimizer, OPTIMIZERS, "server.optimizer")
    if cfg.algorithm == "fed_avg":
        _check(cfg.server.optimizer == "sgd", "server.optimizer", "fed_avg uses sgd; choose algorithm fed_opt")
    agg = cfg.aggregator
    _one_of(agg.kind, AGGREGATORS, "aggregator.kind")
    if agg.kind == QuantizeAggregator.name:
        _check(agg.num_levels is not None and agg.num_levels >= 2, "aggregator.num_levels", "must be >= 2")
    if agg.kind == ClipNoiseAggregator.name:
        _check(agg.clip_norm is not None and agg.clip_norm > 0, "aggregator.clip_norm", "must be > 0")
        _check(agg.noise_stddev >= 0, "aggregator.noise_stddev", "must be >= 0")
    _check(cfg.clients_per_round >= 1, "clients_per_round", "must be >= 1")
    _check(cfg.rounds >= 1, "rounds", "must be >= 1")
    _check(cfg.eval_every >= 0, "eval_every", "must be >= 0")
    _check(cfg.eval_batch_size >= 1, "eval_batch_size", "must be >= 1")
    for i, name in enumerate(cfg.metrics):
        _one_of(name, METRICS, f"metrics[{i}]")
    try:
        parse_backend(cfg.backend)
    except ValueError as exc:
        raise ConfigError("backend", str(exc)) from None
    for i, b in enumerate(cfg.bench.backends):
        try:
            parse_backend(b)
        except ValueError as exc:
            raise ConfigError(f"bench.backends[{i}]", str(exc)) from None
    _check(all(c >= 1 for c in cfg.bench.cohort_sizes), "bench.cohort_sizes", "must be >= 1")
    _check(cfg.bench.measured_rounds >= 1, "bench.measured_rounds", "must be >= 1")
    _check(cfg.bench.warmup_rounds >= 0, "bench.warmup_rounds", "must be >= 0")
    _check(cfg.bench.device_latency_ms >= 0, "bench.device_latency_ms", "must be >= 0")
    return cfg


def parse_config(data: Any) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data))


def load_config(path) -> ExperimentConfig:
    """Load a YAML config; relative dataset paths resolve against the config's directory."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from exc
    cfg = parse_config(data)
    base = path.resolve().parent
    ds = cfg.dataset
    changes = {}
    for name in ("path", "eval_path"):
        value = getattr(ds, name)
        if value is not None and not Path(value).is_absolute():
            changes[name] = str(base / value)
    if changes:
        cfg = cfg.replace(dataset=dataclasses.replace(ds, **changes))
    return cfg


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False)
