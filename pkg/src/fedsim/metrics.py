"""Per-example metrics and mask-aware federated evaluation.

A metric is defined on a single ``(prediction, target)`` pair and returns a
``(value, weight)`` pair. Batch, client and population values are all
weighted averages of example values, so padded rows are dropped simply by
giving them zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Batch, BatchSpec, FederatedData, padded_batch
from .models import Model, softmax_cross_entropy
from .tensor import ParamTree

__all__ = [
    "Accuracy",
    "CrossEntropy",
    "METRICS",
    "MeanSquaredError",
    "Metric",
    "MetricReport",
    "evaluate",
    "evaluate_batches",
    "get_metric",
]


class Metric:
    name = "metric"

    def evaluate_example(self, prediction: np.ndarray, target: np.ndarray) -> tuple[float, float]:
        raise NotImplementedError

    def evaluate_batch(self, predictions: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised ``evaluate_example``; subclasses override for speed."""
        pairs = [self.evaluate_example(p, t) for p, t in zip(predictions, targets)]
        if not pairs:
            return np.zeros(0), np.zeros(0)
        values, weights = zip(*pairs)
        return np.asarray(values, dtype=np.float64), np.asarray(weights, dtype=np.float64)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Accuracy(Metric):
    name = "accuracy"

    def evaluate_example(self, prediction, target):
        return float(np.argmax(prediction) == int(target)), 1.0

    def evaluate_batch(self, predictions, targets):
        values = (np.argmax(predictions, axis=1) == targets.astype(np.int64)).astype(np.float64)
        return values, np.ones_like(values)


class MeanSquaredError(Metric):
    name = "mse"

    def evaluate_example(self, prediction, target):
        return float((float(prediction) - float(target)) ** 2), 1.0

    def evaluate_batch(self, predictions, targets):
        values = (np.asarray(predictions, dtype=np.float64) - targets) ** 2
        return values, np.ones_like(values)


class CrossEntropy(Metric):
    name = "cross_entropy"

    def evaluate_example(self, prediction, target):
        loss, _ = softmax_cross_entropy(np.asarray(prediction, dtype=np.float64)[None, :], np.asarray([target]))
        return float(loss[0]), 1.0

    def evaluate_batch(self, predictions, targets):
        loss, _ = softmax_cross_entropy(np.asarray(predictions, dtype=np.float64), targets)
        return loss, np.ones_like(loss)


METRICS = {cls.name: cls for cls in (Accuracy, MeanSquaredError, CrossEntropy)}


def get_metric(name: str) -> Metric:
    try:
        return METRICS[name]()
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None


@dataclass
class MetricReport:
    per_client: dict[str, dict[str, float]] = field(default_factory=dict)
    overall: dict[str, float] = field(default_factory=dict)
    example_counts: dict[str, int] = field(default_factory=dict)


def evaluate_batches(
    model: Model, params: ParamTree, batches: Iterable[Batch], metrics: Sequence[Metric]
) -> dict[str, tuple[float, float]]:
    """Masked ``(sum(value * weight), sum(weight))`` per metric over ``batches``."""
    totals = {m.name: [0.0, 0.0] for m in metrics}
    for b in batches:
        predictions = model.apply(params, _zero_padding(b))
        targets = np.where(b.mask, b["y"], 0.0) if b.num_real < b.capacity else b["y"]
        for metric in metrics:
            values, weights = metric.evaluate_batch(predictions, targets)
            weights = np.where(b.mask, weights, 0.0)
            totals[metric.name][0] += float(np.sum(np.where(b.mask, values * weights, 0.0)))
            totals[metric.name][1] += float(np.sum(weights))
    return {k: (v[0], v[1]) for k, v in totals.items()}


def _zero_padding(b: Batch) -> Batch:
    if b.num_real == b.capacity:
        return b
    cols = {}
    for name, values in b.columns.items():
        mask = b.mask.reshape((-1,) + (1,) * (values.ndim - 1))
        cols[name] = np.where(mask, values, 0.0)
    return Batch(cols, b.mask, b.num_real)


def evaluate(
    model: Model,
    params: ParamTree,
    fd: FederatedData,
    metrics: Sequence[Metric],
    spec: BatchSpec,
) -> MetricReport:
    """Evaluate every client with ``padded_batch`` and combine the results.

    ``overall`` pools the weighted sums of all clients, which equals the
    example-count-weighted average of the per-client values when every
    example has unit weight.
    """
    report = MetricReport()
    pooled = {m.name: [0.0, 0.0] for m in metrics}
    for cid, ds in fd.clients():
        totals = evaluate_batches(model, params, padded_batch(ds, spec), metrics)
        report.per_client[cid] = {
            name: (num / den if den else float("nan")) for name, (num, den) in totals.items()
        }
        report.example_counts[cid] = ds.num_examples
        for name, (num, den) in totals.items():
            pooled[name][0] += num
            pooled[name][1] += den
    report.overall = {name: (num / den if den else float("nan")) for name, (num, den) in pooled.items()}
    return report
