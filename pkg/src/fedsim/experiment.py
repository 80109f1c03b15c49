"""Config-driven experiments: training runs, evaluation and the cohort-scaling benchmark.

A run directory contains

* ``metrics.csv``          round, train_loss and (when scheduled) eval_<metric> columns
* ``timing.csv``           round, round_duration_s
* ``metrics.dat``          the metrics table in gnuplot layout
* ``final_params.json``    final server parameters
* ``config.resolved.yaml`` the fully resolved config, re-parseable

Everything except ``timing.csv`` is a pure function of (config, seed).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregators import Aggregator, clip_noise_aggregator, mean_aggregator, quantize_aggregator
from .algorithms import ClientUpdateConfig, FedOpt, RoundDiagnostics, RoundState
from .config import ExperimentConfig, dump_config, load_config
from .data import BatchSpec, FederatedData
from .exceptions import ConfigError, FedSimError, NonFiniteError
from .metrics import MetricReport, evaluate, get_metric
from .models import Model, linear_regression_model, logistic_classifier_model, mlp_model
from .optimizers import get_optimizer, sgd
from .runner import parse_backend
from .storage import load_federated, save_params
from .synthetic import generate_synthetic
from .tensor import ParamTree, Rng, tree_map

__all__ = [
    "BenchRow",
    "RunResult",
    "bench_cohort_scaling",
    "build_model",
    "build_process",
    "evaluate_params",
    "load_dataset",
    "resolve_config",
    "run",
    "run_experiment",
    "write_bench",
    "write_report_csv",
]

log = logging.getLogger(__name__)

DEFAULT_METRICS = {"linear": ["mse"], "logistic": ["accuracy", "cross_entropy"], "mlp": ["accuracy", "cross_entropy"]}


def load_dataset(cfg: ExperimentConfig) -> FederatedData:
    if cfg.dataset.synthetic is not None:
        return generate_synthetic(cfg.dataset.synthetic)
    return load_federated(cfg.dataset.path)


def load_eval_dataset(cfg: ExperimentConfig, train: FederatedData) -> FederatedData:
    return load_federated(cfg.dataset.eval_path) if cfg.dataset.eval_path else train


def resolve_config(cfg: ExperimentConfig, fd: FederatedData) -> ExperimentConfig:
    """Fill in fields inferred from the data and check the config against it."""
    if len(fd) == 0:
        raise ConfigError("dataset", "dataset has no clients")
    first = fd[fd.client_ids()[0]]
    if "x" not in first.columns or "y" not in first.columns:
        raise ConfigError("dataset", "clients need 'x' and 'y' columns")
    x = first["x"]
    num_features = 1 if x.ndim == 1 else int(np.prod(x.shape[1:]))
    m = cfg.model
    if m.num_features is not None and m.num_features != num_features:
        raise ConfigError("model.num_features", f"is {m.num_features} but the data has {num_features} features")
    changes = {"num_features": num_features}
    if m.kind in ("logistic", "mlp") and m.num_classes is None:
        syn = cfg.dataset.synthetic
        if syn is not None and syn.task == "classification":
            changes["num_classes"] = syn.num_classes
        else:
            changes["num_classes"] = max(2, int(max(float(np.max(ds["y"])) for _, ds in fd.clients() if len(ds))) + 1)
    model = dataclasses.replace(m, **changes)
    if cfg.clients_per_round > len(fd):
        raise ConfigError("clients_per_round", f"is {cfg.clients_per_round} but the dataset has {len(fd)} clients")
    metrics = cfg.metrics or DEFAULT_METRICS[m.kind]
    return cfg.replace(model=model, metrics=list(metrics))


def build_model(cfg: ExperimentConfig) -> Model:
    m = cfg.model
    if m.kind == "linear":
        return linear_regression_model(m.num_features, m.use_bias)
    if m.kind == "logistic":
        return logistic_classifier_model(m.num_features, m.num_classes)
    return mlp_model([m.num_features, *m.hidden, m.num_classes], m.activation)


def build_aggregator(cfg: ExperimentConfig) -> Aggregator:
    a = cfg.aggregator
    if a.kind == "quantize":
        return quantize_aggregator(a.num_levels)
    if a.kind == "clip_noise":
        return clip_noise_aggregator(a.clip_norm, a.noise_stddev)
    return mean_aggregator()


def initial_params(cfg: ExperimentConfig, model: Model) -> ParamTree | None:
    if cfg.model.init_value is None:
        return None
    value = float(cfg.model.init_value)
    return tree_map(lambda x: np.full_like(x, value), model.init(Rng.from_seed(cfg.seed).split("init")))


def build_process(
    cfg: ExperimentConfig,
    fd: FederatedData,
    *,
    backend=None,
    clients_per_round: int | None = None,
    device_latency_s: float = 0.0,
) -> FedOpt:
    if cfg.algorithm == "fed_avg":
        server_opt = sgd()
    else:
        server_opt = get_optimizer(cfg.server.optimizer, **cfg.server.optimizer_options())
    return FedOpt(
        model=build_model(cfg),
        client_config=ClientUpdateConfig(cfg.client.batch_size, cfg.client.num_epochs, cfg.client.lr),
        server_optimizer=server_opt,
        server_lr=cfg.server.lr,
        aggregator=build_aggregator(cfg),
        fd=fd,
        clients_per_round=clients_per_round or cfg.clients_per_round,
        backend=parse_backend(backend if backend is not None else cfg.backend),
        device_latency_s=device_latency_s,
    )


def evaluate_params(cfg: ExperimentConfig, model: Model, params: ParamTree, fd: FederatedData) -> MetricReport:
    metrics = [get_metric(name) for name in cfg.metrics]
    return evaluate(model, params, fd, metrics, BatchSpec(cfg.eval_batch_size))


@dataclass
class RunResult:
    config: ExperimentConfig
    state: RoundState
    diagnostics: list[RoundDiagnostics] = field(default_factory=list)
    evals: dict[int, dict[str, float]] = field(default_factory=dict)
    output_dir: Path | None = None


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def run(cfg: ExperimentConfig, output_dir=None) -> RunResult:
    """Train according to ``cfg`` and write the run directory (if ``output_dir`` is not None)."""
    fd = load_dataset(cfg)
    cfg = resolve_config(cfg, fd)
    eval_fd = load_eval_dataset(cfg, fd)
    process = build_process(cfg, fd)
    state = process.init(cfg.seed, initial_params(cfg, process.model))
    result = RunResult(cfg, state)
    for _ in range(cfg.rounds):
        state, diag = process.apply_round(state)
        result.diagnostics.append(diag)
        if cfg.eval_every and state.round_index % cfg.eval_every == 0:
            report = evaluate_params(cfg, process.model, state.server_params, eval_fd)
            result.evals[state.round_index] = report.overall
        log.debug("round %d train_loss=%.6g", diag.round_index, diag.train_loss)
    result.state = state
    if output_dir is not None:
        result.output_dir = Path(output_dir)
        write_run(result)
    return result


def write_run(result: RunResult) -> None:
    out = result.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    eval_cols = [f"eval_{m}" for m in cfg.metrics] if cfg.eval_every else []
    rows = []
    for diag in result.diagnostics:
        ev = result.evals.get(diag.round_index)
        rows.append([diag.round_index, diag.train_loss] + [ev[m] if ev else None for m in cfg.metrics if eval_cols])
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "train_loss", *eval_cols])
        for r in rows:
            writer.writerow([r[0], *(_fmt(v) for v in r[1:])])
    with open(out / "metrics.dat", "w") as fh:
        fh.write("# " + " ".join(["round", "train_loss", *eval_cols]) + "\n")
        for r in rows:
            fh.write(" ".join([str(r[0]), *("NaN" if v is None or math.isnan(v) else repr(float(v)) for v in r[1:])]) + "\n")
    with open(out / "timing.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "round_duration_s"])
        for diag in result.diagnostics:
            writer.writerow([diag.round_index, repr(diag.round_duration_s)])
    save_params(result.state.server_params, out / "final_params.json")
    (out / "config.resolved.yaml").write_text(dump_config(cfg), encoding="utf-8")


def run_experiment(config_path, *, seed: int | None = None, backend: str | None = None, out=None) -> int:
    """CLI-facing wrapper around :func:`run`; returns a process exit code.

    0 success, 2 config error, 3 numeric failure (non-finite parameters),
    1 anything else the library reports (bad data file, IO error).
    """
    try:
        cfg = apply_overrides(load_config(config_path), seed=seed, backend=backend, out=out)
        run(cfg, cfg.output_dir)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except NonFiniteError as exc:
        log.error("numeric failure: %s", exc)
        return 3
    except (FedSimError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


def apply_overrides(cfg: ExperimentConfig, *, seed=None, backend=None, out=None) -> ExperimentConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed)
    if backend is not None:
        try:
            parse_backend(backend)
        except ValueError as exc:
            raise ConfigError("backend", str(exc)) from None
        changes["backend"] = backend
    if out is not None:
        changes["output_dir"] = str(out)
    return cfg.replace(**changes) if changes else cfg


def write_report_csv(report: MetricReport, path) -> None:
    names = list(report.overall)
    total = sum(report.example_counts.values())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client_id", "num_examples", *names])
        for cid, values in report.per_client.items():
            writer.writerow([cid, report.example_counts[cid], *(repr(values[n]) for n in names)])
        writer.writerow(["__overall__", total, *(repr(report.overall[n]) for n in names)])


@dataclass(frozen=True)
class BenchRow:
    cohort_size: int
    backend: str
    mean_s: float
    std_s: float


def bench_cohort_scaling(
    cfg: ExperimentConfig,
    cohort_sizes=None,
    backends=None,
    *,
    fd: FederatedData | None = None,
) -> list[BenchRow]:
    """Average round duration per (cohort size, backend), excluding warm-up rounds."""
    bench = cfg.bench
    cohort_sizes = list(cohort_sizes or bench.cohort_sizes)
    backends = list(backends or bench.backends)
    fd = fd if fd is not None else load_dataset(cfg)
    cfg = resolve_config(cfg.replace(clients_per_round=1), fd)
    for c in cohort_sizes:
        if c > len(fd):
            raise ConfigError("bench.cohort_sizes", f"cohort {c} exceeds the {len(fd)} available clients")
    rows = []
    for c in cohort_sizes:
        for b in backends:
            process = build_process(
                cfg, fd, backend=b, clients_per_round=c, device_latency_s=bench.device_latency_ms / 1000.0
            )
            state = process.init(cfg.seed, initial_params(cfg, process.model))
            durations = []
            for i in range(bench.warmup_rounds + bench.measured_rounds):
                state, diag = process.apply_round(state)
                if i >= bench.warmup_rounds:
                    durations.append(diag.round_duration_s)
            std = statistics.stdev(durations) if len(durations) > 1 else 0.0
            rows.append(BenchRow(c, str(parse_backend(b)), statistics.fmean(durations), std))
            log.info("cohort=%d backend=%s mean=%.4fs", c, b, rows[-1].mean_s)
    return rows


def write_bench(rows: list[BenchRow], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cohort_size", "backend", "mean_s", "std_s"])
        for r in rows:
            writer.writerow([r.cohort_size, r.backend, repr(r.mean_s), repr(r.std_s)])
    # one gnuplot data block per backend ("index N" selects it)
    with open(out / "bench.dat", "w") as fh:
        for backend in dict.fromkeys(r.backend for r in rows):
            fh.write(f"# backend {backend}\n# cohort_size mean_s std_s\n")
            for r in rows:
                if r.backend == backend:
                    fh.write(f"{r.cohort_size} {r.mean_s!r} {r.std_s!r}\n")
            fh.write("\n\n")
