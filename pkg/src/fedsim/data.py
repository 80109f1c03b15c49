"""Federated and client datasets, and the three batching strategies.

``batch``                 sequential, final batch left short (illustration only)
``padded_batch``          sequential, final batch zero-padded up to a bucket size (evaluation)
``shuffle_repeat_batch``  shuffled without replacement, repeated, fixed size (training)

Padding only ever goes at the end of a batch and padded rows are zeros; the
``mask`` says which rows are real.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .exceptions import CohortTooLarge, EmptyDataset, NoBucketFits
from .tensor import Rng, as_tensor

__all__ = [
    "Batch",
    "BatchSpec",
    "ClientDataset",
    "FederatedData",
    "batch",
    "client_stats",
    "default_buckets",
    "padded_batch",
    "sample_clients",
    "shuffle_repeat_batch",
]


class ClientDataset:
    """Columnar store of one client's examples.

    Every column is a float64 array whose leading axis indexes examples.
    """

    __slots__ = ("_columns", "_num_examples")

    def __init__(self, columns: Mapping[str, np.ndarray]):
        if not columns:
            raise ValueError("a client dataset needs at least one column")
        cols = {}
        n = None
        for name, values in columns.items():
            arr = as_tensor(values)
            if arr.ndim == 0:
                raise ValueError(f"column {name!r} must have a leading example axis")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValueError(
                    f"column {name!r} has {arr.shape[0]} rows, expected {n}"
                )
            cols[str(name)] = arr
        self._columns = cols
        self._num_examples = int(n)

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return self._columns

    @property
    def num_examples(self) -> int:
        return self._num_examples

    def __len__(self) -> int:
        return self._num_examples

    def __getitem__(self, name: str) -> np.ndarray:
        return self._columns[name]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClientDataset):
            return NotImplemented
        return list(self._columns) == list(other._columns) and all(
            np.array_equal(self._columns[k], other._columns[k]) for k in self._columns
        )

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self._columns.items())
        return f"ClientDataset({shapes})"

    def take(self, indices: np.ndarray) -> dict[str, np.ndarray]:
        return {k: v[indices] for k, v in self._columns.items()}


class FederatedData:
    """Ordered mapping from client id to :class:`ClientDataset`.

    Clients are always iterated in lexicographic id order. ``metadata`` holds
    dataset-level arrays (for instance the true weights of a synthetic task).
    """

    def __init__(
        self,
        clients: Mapping[str, ClientDataset],
        metadata: Mapping[str, np.ndarray] | None = None,
    ):
        self._clients = {}
        for cid in sorted(clients):
            ds = clients[cid]
            if not isinstance(ds, ClientDataset):
                ds = ClientDataset(ds)
            self._clients[str(cid)] = ds
        self.metadata = {k: as_tensor(v) for k, v in (metadata or {}).items()}

    def client_ids(self) -> list[str]:
        return list(self._clients)

    def clients(self) -> Iterator[tuple[str, ClientDataset]]:
        return iter(self._clients.items())

    def client_size(self, client_id: str) -> int:
        return self._clients[client_id].num_examples

    def num_clients(self) -> int:
        return len(self._clients)

    def __len__(self) -> int:
        return len(self._clients)

    def __getitem__(self, client_id: str) -> ClientDataset:
        return self._clients[client_id]

    def __contains__(self, client_id) -> bool:
        return client_id in self._clients

    def __iter__(self) -> Iterator[str]:
        return iter(self._clients)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FederatedData):
            return NotImplemented
        return (
            list(self._clients) == list(other._clients)
            and all(self._clients[k] == other._clients[k] for k in self._clients)
            and list(self.metadata) == list(other.metadata)
            and all(np.array_equal(self.metadata[k], other.metadata[k]) for k in self.metadata)
        )

    def __repr__(self) -> str:
        return f"FederatedData(num_clients={len(self._clients)})"

    def subset(self, client_ids: Sequence[str]) -> "FederatedData":
        return FederatedData({cid: self._clients[cid] for cid in client_ids}, self.metadata)


@dataclass(frozen=True)
class Batch:
    """A fixed-capacity slice of a client dataset.

    Rows ``[:num_real]`` are real examples, the rest are zero padding.
    """

    columns: Mapping[str, np.ndarray]
    mask: np.ndarray
    num_real: int

    @property
    def capacity(self) -> int:
        return int(self.mask.shape[0])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @classmethod
    def full(cls, columns: Mapping[str, np.ndarray]) -> "Batch":
        cols = {k: np.asarray(v, dtype=np.float64) for k, v in columns.items()}
        n = next(iter(cols.values())).shape[0]
        return cls(cols, np.ones(n, dtype=bool), n)


def default_buckets(batch_size: int) -> tuple[int, ...]:
    """Powers of two below ``batch_size``, plus ``batch_size`` itself."""
    buckets = []
    size = 1
    while size < batch_size:
        buckets.append(size)
        size *= 2
    buckets.append(batch_size)
    return tuple(buckets)


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    buckets: tuple[int, ...] | None = None
    seed_label: str = "shuffle"
    num_epochs: int | None = None
    num_steps: int | None = None

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.buckets is not None:
            buckets = tuple(int(b) for b in self.buckets)
            if not buckets or any(b < 1 for b in buckets):
                raise ValueError("buckets must be a nonempty list of positive sizes")
            if list(buckets) != sorted(set(buckets)):
                raise ValueError("buckets must be strictly ascending")
            object.__setattr__(self, "buckets", buckets)
        if self.num_epochs is not None and self.num_steps is not None:
            raise ValueError("set num_epochs or num_steps, not both")
        for name in ("num_epochs", "num_steps"):
            value = getattr(self, name)
            if value is not None and int(value) < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")

    def resolved_buckets(self) -> tuple[int, ...]:
        return self.buckets if self.buckets is not None else default_buckets(self.batch_size)


def _require_nonempty(ds: ClientDataset) -> int:
    n = ds.num_examples
    if n == 0:
        raise EmptyDataset("cannot batch an empty client dataset")
    return n


def _slice_batch(ds: ClientDataset, start: int, stop: int, capacity: int) -> Batch:
    num_real = stop - start
    cols = {}
    for name, values in ds.columns.items():
        if capacity == num_real:
            cols[name] = values[start:stop]
        else:
            padded = np.zeros((capacity,) + values.shape[1:], dtype=np.float64)
            padded[:num_real] = values[start:stop]
            cols[name] = padded
    mask = np.zeros(capacity, dtype=bool)
    mask[:num_real] = True
    return Batch(cols, mask, num_real)


def batch(ds: ClientDataset, spec: BatchSpec) -> list[Batch]:
    """Sequential batches; the final one is short when ``batch_size`` does not divide n."""
    n = _require_nonempty(ds)
    size = spec.batch_size
    return [_slice_batch(ds, start, min(start + size, n), min(size, n - start)) for start in range(0, n, size)]


def padded_batch(ds: ClientDataset, spec: BatchSpec) -> list[Batch]:
    """Sequential batches whose final remainder is padded to the smallest fitting bucket.

    Every emitted capacity is one of ``spec.resolved_buckets()``, which bounds
    the number of distinct batch shapes across a whole federated dataset.
    """
    n = _require_nonempty(ds)
    size = spec.batch_size
    buckets = spec.resolved_buckets()
    if buckets[-1] != size:
        raise ValueError(
            f"padded_batch needs batch_size == max bucket, got {size} vs {buckets[-1]}"
        )
    out = []
    for start in range(0, n, size):
        stop = min(start + size, n)
        remainder = stop - start
        capacity = next((b for b in buckets if b >= remainder), None)
        if capacity is None:
            raise NoBucketFits(f"no bucket fits a final batch of {remainder}")
        out.append(_slice_batch(ds, start, stop, capacity))
    return out


def shuffle_repeat_batch(ds: ClientDataset, spec: BatchSpec, rng: Rng) -> Iterator[Batch]:
    """Full-size batches over a shuffled, repeated example stream.

    Each epoch is an independent permutation drawn from
    ``rng.split(spec.seed_label).split(epoch)``. Examples left over at an
    epoch boundary lead the next batch, followed by the next epoch's
    permutation. In epoch mode the stream's final partial batch is dropped;
    in step mode exactly ``num_steps`` batches are produced.
    """
    n = _require_nonempty(ds)
    if (spec.num_epochs is None) == (spec.num_steps is None):
        raise ValueError("shuffle_repeat_batch needs exactly one of num_epochs / num_steps")
    if spec.num_epochs is not None:
        num_batches = (n * spec.num_epochs) // spec.batch_size
    else:
        num_batches = spec.num_steps
    return _shuffle_repeat_iter(ds, spec.batch_size, num_batches, rng.split(spec.seed_label))


def _shuffle_repeat_iter(ds: ClientDataset, size: int, num_batches: int, rng: Rng) -> Iterator[Batch]:
    n = ds.num_examples
    pending = np.empty(0, dtype=np.int64)
    epoch = 0
    mask = np.ones(size, dtype=bool)
    for _ in range(num_batches):
        while pending.shape[0] < size:
            pending = np.concatenate([pending, rng.split(epoch).permutation(n)])
            epoch += 1
        idx, pending = pending[:size], pending[size:]
        yield Batch(ds.take(idx), mask, size)


def sample_clients(fd: FederatedData, c: int, rng: Rng) -> list[str]:
    """Uniformly sample ``c`` distinct client ids; returned in sorted order."""
    ids = fd.client_ids()
    if c < 1:
        raise ValueError(f"cohort size must be >= 1, got {c}")
    if c > len(ids):
        raise CohortTooLarge(f"cohort of {c} requested from {len(ids)} clients")
    chosen = rng.generator().choice(len(ids), size=c, replace=False)
    return sorted(ids[i] for i in chosen)


def client_stats(fd: FederatedData) -> dict[int, int]:
    """Histogram of client sizes: ``{num_examples: num_clients}``, sorted by size."""
    counts = Counter(ds.num_examples for _, ds in fd.clients())
    return dict(sorted(counts.items()))
