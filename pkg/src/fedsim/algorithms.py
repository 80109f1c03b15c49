"""Federated averaging and its server-optimizer generalisation.

One round: sample a cohort, run local minibatch SGD on every sampled client
through :func:`~fedsim.runner.for_each_client`, aggregate the
``(server_params - client_params, num_examples)`` pairs, and feed the
aggregate to the server optimizer as a pseudo-gradient. With SGD as the
server optimizer this is exactly ``w <- w - server_lr * weighted_mean(delta)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .aggregators import Aggregator, MeanAggregator
from .data import BatchSpec, ClientDataset, FederatedData, sample_clients, shuffle_repeat_batch
from .exceptions import ClientExecutionError, NonFiniteError, NonFiniteParams
from .models import Model
from .optimizers import Optimizer, OptState, sgd
from .runner import Backend, ClientWorkItem, ForEachClientSpec, for_each_client, parse_backend, timing_probe
from .tensor import ParamTree, Rng, check_finite, tree_multimap, tree_sub

__all__ = [
    "ClientOutput",
    "ClientUpdateConfig",
    "FedOpt",
    "RoundDiagnostics",
    "RoundState",
    "client_update",
    "fed_avg",
    "fed_opt",
    "fedavg_client_spec",
]


@dataclass(frozen=True)
class ClientUpdateConfig:
    batch_size: int
    num_epochs: int = 1
    client_lr: float = 0.1

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if int(self.num_epochs) < 1:
            raise ValueError(f"num_epochs must be >= 1, got {self.num_epochs}")
        if float(self.client_lr) < 0:
            raise ValueError(f"client_lr must be >= 0, got {self.client_lr}")

    def batch_spec(self) -> BatchSpec:
        return BatchSpec(self.batch_size, num_epochs=self.num_epochs)


class _ClientState(NamedTuple):
    params: ParamTree
    num_steps: int
    loss_sum: float


class ClientOutput(NamedTuple):
    delta: ParamTree
    num_steps: int
    mean_loss: float  # mean minibatch loss before each local step; nan if no steps ran


def fedavg_client_spec(model: Model, client_lr: float, device_latency_s: float = 0.0) -> ForEachClientSpec:
    """Local minibatch SGD as ``(client_init, client_step, client_final)``.

    ``device_latency_s`` blocks each client for that long once, standing in
    for work that runs off the host (an accelerator) while the host waits.
    """
    lr = float(client_lr)

    def client_init(server_params, rng):
        return _ClientState(server_params, 0, 0.0)

    def client_step(state, batch):
        loss, grads = model.loss_and_grad(state.params, batch)
        params = tree_multimap(lambda p, g: p - g * lr, state.params, grads)
        return _ClientState(params, state.num_steps + 1, state.loss_sum + loss)

    def client_final(server_params, state):
        if device_latency_s > 0:
            time.sleep(device_latency_s)
        mean_loss = state.loss_sum / state.num_steps if state.num_steps else float("nan")
        return ClientOutput(tree_sub(server_params, state.params), state.num_steps, mean_loss)

    return ForEachClientSpec(client_init, client_step, client_final)


def client_update(
    model: Model, w: ParamTree, ds: ClientDataset, cfg: ClientUpdateConfig, rng: Rng
) -> tuple[ParamTree, float]:
    """Run ``cfg.num_epochs`` epochs of local SGD from ``w``; return ``(w - w', |S_k|)``."""
    batches = shuffle_repeat_batch(ds, cfg.batch_spec(), rng)
    spec = fedavg_client_spec(model, cfg.client_lr)
    [(_, out)] = for_each_client(spec, w, [ClientWorkItem("client", batches, rng)])
    return out.delta, float(ds.num_examples)


@dataclass(frozen=True)
class RoundState:
    server_params: ParamTree
    server_opt_state: OptState
    round_index: int
    rng: Rng


@dataclass(frozen=True)
class RoundDiagnostics:
    round_index: int
    train_loss: float
    round_duration_s: float
    cohort: tuple[str, ...] = ()
    client_durations_s: dict = field(default_factory=dict, compare=False)


@dataclass
class FedOpt:
    """A configured federated training process; step it with :meth:`apply_round`."""

    model: Model
    client_config: ClientUpdateConfig
    server_optimizer: Optimizer
    server_lr: float
    aggregator: Aggregator
    fd: FederatedData
    clients_per_round: int
    backend: Backend = field(default_factory=Backend)
    device_latency_s: float = 0.0

    def __post_init__(self):
        self.backend = parse_backend(self.backend)
        if not 1 <= self.clients_per_round <= len(self.fd):
            raise ValueError(
                f"clients_per_round must be in [1, {len(self.fd)}], got {self.clients_per_round}"
            )
        self._spec = fedavg_client_spec(self.model, self.client_config.client_lr, self.device_latency_s)

    def init(self, seed: int, params: ParamTree | None = None) -> RoundState:
        root = Rng.from_seed(seed)
        if params is None:
            params = self.model.init(root.split("init"))
        check_finite(params, "initial params")
        return RoundState(params, self.server_optimizer.init(params), 0, root)

    def apply_round(self, state: RoundState) -> tuple[RoundState, RoundDiagnostics]:
        start = time.perf_counter()
        t = state.round_index + 1
        round_rng = state.rng.split("round").split(t)
        cohort = sample_clients(self.fd, self.clients_per_round, round_rng.split("cohort"))
        client_rngs = round_rng.split("clients")
        batch_spec = self.client_config.batch_spec()
        work = []
        for cid in cohort:
            crng = client_rngs.split(cid)
            work.append(ClientWorkItem(cid, shuffle_repeat_batch(self.fd[cid], batch_spec, crng), crng))
        try:
            timing = timing_probe(self._spec, state.server_params, work, self.backend)
            deltas = [(out.delta, float(self.fd.client_size(cid))) for cid, out in timing.results]
            update = self.aggregator.aggregate(deltas, round_rng.split("aggregate"))
            params, opt_state = self.server_optimizer.step(
                update, state.server_opt_state, state.server_params, self.server_lr
            )
            check_finite(params, "server params")
        except ClientExecutionError as exc:
            if isinstance(exc.cause, NonFiniteError):
                raise NonFiniteParams(t, f"round {t}: {exc}") from exc
            raise
        except NonFiniteError as exc:
            raise NonFiniteParams(t, f"round {t}: {exc}") from exc

        loss_num = loss_den = 0.0
        for cid, out in timing.results:
            if out.num_steps:
                n = self.fd.client_size(cid)
                loss_num += n * out.mean_loss
                loss_den += n
        train_loss = loss_num / loss_den if loss_den else float("nan")
        diag = RoundDiagnostics(
            round_index=t,
            train_loss=train_loss,
            round_duration_s=time.perf_counter() - start,
            cohort=tuple(cohort),
            client_durations_s=timing.client_durations_s,
        )
        return RoundState(params, opt_state, t, state.rng), diag


RoundCallback = Callable[[RoundState, RoundDiagnostics], None]


def fed_opt(
    model: Model,
    cfg: ClientUpdateConfig,
    server_optimizer: Optimizer,
    server_lr: float,
    aggregator: Aggregator | None,
    fd: FederatedData,
    c: int,
    T: int,
    seed: int,
    *,
    backend: "str | Backend | None" = None,
    init_params: ParamTree | None = None,
    callback: RoundCallback | None = None,
) -> tuple[RoundState, list[RoundDiagnostics]]:
    """Run ``T`` rounds with a server optimizer; returns the final state and per-round diagnostics."""
    if T < 1:
        raise ValueError(f"number of rounds must be >= 1, got {T}")
    process = FedOpt(
        model, cfg, server_optimizer, server_lr, aggregator or MeanAggregator(), fd, c, parse_backend(backend)
    )
    state = process.init(seed, init_params)
    history = []
    for _ in range(T):
        state, diag = process.apply_round(state)
        history.append(diag)
        if callback is not None:
            callback(state, diag)
    return state, history


def fed_avg(
    model: Model,
    cfg: ClientUpdateConfig,
    server_lr: float,
    aggregator: Aggregator | None,
    fd: FederatedData,
    c: int,
    T: int,
    seed: int,
    **kwargs,
) -> tuple[RoundState, list[RoundDiagnostics]]:
    """Federated averaging: ``w_t = w_{t-1} - server_lr * sum(n_k delta_k) / sum(n_k)``."""
    return fed_opt(model, cfg, sgd(), server_lr, aggregator, fd, c, T, seed, **kwargs)
