"""Per-client execution: ``for_each_client`` on a sequential or thread-pool backend.

A client's work is ``client_final(server_params, fold(client_step,
client_init(server_params, rng), batches))``. Results are always returned
sorted by client id, and every client's randomness is derived from its own id,
so the backend never shows up in the outputs.
"""

from __future__ import annotations

import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .exceptions import ClientExecutionError
from .tensor import ParamTree, Rng

__all__ = [
    "Backend",
    "ClientWorkItem",
    "ForEachClientSpec",
    "RoundTiming",
    "for_each_client",
    "parse_backend",
    "timing_probe",
]


@dataclass(frozen=True)
class ForEachClientSpec:
    """The three pure functions that define one client's work."""

    client_init: Callable[[ParamTree, Rng], Any]
    client_step: Callable[[Any, Any], Any]
    client_final: Callable[[ParamTree, Any], Any]


@dataclass
class ClientWorkItem:
    client_id: str
    batches: Iterable[Any]
    rng: Rng

    @classmethod
    def for_round(cls, client_id: str, batches: Iterable[Any], round_rng: Rng) -> "ClientWorkItem":
        return cls(client_id, batches, round_rng.split(client_id))


@dataclass(frozen=True)
class Backend:
    """``num_workers == 0`` means run in the calling thread."""

    num_workers: int = 0

    def __post_init__(self):
        if self.num_workers < 0:
            raise ValueError("num_workers must be >= 0")

    @property
    def is_parallel(self) -> bool:
        return self.num_workers > 0

    def __str__(self) -> str:
        return f"parallel:{self.num_workers}" if self.is_parallel else "sequential"


def parse_backend(value: "str | Backend | None") -> Backend:
    """Parse ``"sequential"`` or ``"parallel:N"``."""
    if value is None:
        return Backend()
    if isinstance(value, Backend):
        return value
    text = str(value).strip().lower()
    if text == "sequential":
        return Backend()
    if text.startswith("parallel"):
        _, _, count = text.partition(":")
        try:
            n = int(count) if count else 4
        except ValueError:
            raise ValueError(f"bad worker count in backend {value!r}") from None
        if n < 1:
            raise ValueError(f"parallel backend needs >= 1 worker, got {n}")
        return Backend(n)
    raise ValueError(f"unknown backend {value!r}; expected 'sequential' or 'parallel:N'")


@dataclass
class RoundTiming:
    duration_s: float
    client_durations_s: dict[str, float] = field(default_factory=dict)
    results: list[tuple[str, Any]] = field(default_factory=list)


def _run_one(spec: ForEachClientSpec, server_params: ParamTree, item: ClientWorkItem):
    start = time.perf_counter()
    try:
        state = spec.client_init(server_params, item.rng)
        for b in item.batches:
            state = spec.client_step(state, b)
        output = spec.client_final(server_params, state)
    except Exception as exc:
        raise ClientExecutionError(item.client_id, exc) from exc
    return item.client_id, output, time.perf_counter() - start


def _run_cohort(spec, server_params, work, backend):
    work = sorted(work, key=lambda item: item.client_id)
    ids = [item.client_id for item in work]
    if len(set(ids)) != len(ids):
        raise ValueError("work items must have distinct client ids")
    backend = parse_backend(backend)
    if not backend.is_parallel or len(work) <= 1:
        done = [_run_one(spec, server_params, item) for item in work]
    else:
        with ThreadPoolExecutor(max_workers=backend.num_workers) as pool:
            futures = [pool.submit(_run_one, spec, server_params, item) for item in work]
            _, pending = wait(futures, return_when=FIRST_EXCEPTION)
            for fut in pending:
                fut.cancel()
            failed = [f for f in futures if f.done() and not f.cancelled() and f.exception()]
            if failed:
                # report the lowest failing id so the error is schedule-independent
                errors = sorted((f.exception() for f in failed), key=lambda e: getattr(e, "client_id", ""))
                raise errors[0]
            done = [f.result() for f in futures]
    done.sort(key=lambda r: r[0])
    return done


def for_each_client(
    spec: ForEachClientSpec,
    server_params: ParamTree,
    work: Sequence[ClientWorkItem],
    backend: "str | Backend | None" = None,
) -> list[tuple[str, Any]]:
    """Run every work item and return ``[(client_id, output), ...]`` sorted by id.

    Raises:
        ClientExecutionError: if any client function raises (fail-fast).
    """
    return [(cid, out) for cid, out, _ in _run_cohort(spec, server_params, work, backend)]


def timing_probe(
    spec: ForEachClientSpec,
    server_params: ParamTree,
    work: Sequence[ClientWorkItem],
    backend: "str | Backend | None" = None,
) -> RoundTiming:
    """Like :func:`for_each_client` but also reports wall-clock durations."""
    start = time.perf_counter()
    done = _run_cohort(spec, server_params, work, backend)
    total = time.perf_counter() - start
    return RoundTiming(
        duration_s=total,
        client_durations_s={cid: dt for cid, _, dt in done},
        results=[(cid, out) for cid, out, _ in done],
    )
