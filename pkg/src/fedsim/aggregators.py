"""Server-side aggregators combining weighted client deltas.

An aggregator sees the raw ``(delta, num_examples)`` pairs in client-id order,
so compression or privacy mechanisms run before averaging.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import EmptyCohort, ZeroTotalWeight
from .tensor import ParamTree, Rng, tree_l2_norm, tree_leaves, tree_map, tree_weighted_sum

__all__ = [
    "Aggregator",
    "ClipNoiseAggregator",
    "MeanAggregator",
    "QuantizeAggregator",
    "clip_noise_aggregator",
    "mean_aggregator",
    "quantize_aggregator",
    "stochastic_quantize",
]

Deltas = Sequence[tuple[ParamTree, float]]


def _weighted_mean(deltas: Deltas) -> ParamTree:
    if not deltas:
        raise EmptyCohort("no client deltas to aggregate")
    total = float(sum(w for _, w in deltas))
    if total <= 0.0:
        raise ZeroTotalWeight(f"total client weight must be > 0, got {total}")
    weighted = tree_weighted_sum([(d, w) for d, w in deltas])
    return tree_map(lambda x: x / total, weighted)


class Aggregator:
    name = "aggregator"

    def aggregate(self, deltas: Deltas, rng: Rng) -> ParamTree:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class MeanAggregator(Aggregator):
    """Example-weighted mean of client deltas."""

    name = "mean"

    def aggregate(self, deltas, rng=None):
        return _weighted_mean(list(deltas))


def stochastic_quantize(
    values: np.ndarray, low: float, high: float, num_levels: int, gen: np.random.Generator
) -> np.ndarray:
    """Unbiased stochastic rounding onto ``num_levels`` evenly spaced points in ``[low, high]``."""
    values = np.asarray(values, dtype=np.float64)
    if high <= low:
        return values.copy()
    scale = (num_levels - 1) / (high - low)
    pos = np.clip((values - low) * scale, 0.0, num_levels - 1)
    lower = np.floor(pos)
    index = lower + (gen.random(values.shape) < (pos - lower))
    out = low + index / scale
    return np.where(index >= num_levels - 1, high, out)


class QuantizeAggregator(Aggregator):
    """Quantize each delta to ``num_levels`` uniform levels over its own [min, max], then average."""

    name = "quantize"

    def __init__(self, num_levels: int):
        if int(num_levels) < 2:
            raise ValueError(f"num_levels must be >= 2, got {num_levels}")
        self.num_levels = int(num_levels)

    def quantize(self, delta: ParamTree, gen: np.random.Generator) -> ParamTree:
        leaves = [leaf for leaf in tree_leaves(delta) if leaf.size]
        if not leaves:
            return delta
        low = min(float(np.min(leaf)) for leaf in leaves)
        high = max(float(np.max(leaf)) for leaf in leaves)
        return tree_map(lambda x: stochastic_quantize(x, low, high, self.num_levels, gen), delta)

    def aggregate(self, deltas, rng):
        deltas = list(deltas)
        if not deltas:
            raise EmptyCohort("no client deltas to aggregate")
        gen = rng.generator()
        return _weighted_mean([(self.quantize(d, gen), w) for d, w in deltas])

    def __repr__(self) -> str:
        return f"QuantizeAggregator(num_levels={self.num_levels})"


class ClipNoiseAggregator(Aggregator):
    """Clip each delta to global l2 norm ``clip_norm``, average, add Gaussian noise.

    Noise is elementwise ``N(0, (noise_stddev * clip_norm / total_weight)^2)``.
    Privacy accounting is out of scope.
    """

    name = "clip_noise"

    def __init__(self, clip_norm: float, noise_stddev: float = 0.0):
        if not float(clip_norm) > 0.0:
            raise ValueError(f"clip_norm must be > 0, got {clip_norm}")
        if float(noise_stddev) < 0.0:
            raise ValueError(f"noise_stddev must be >= 0, got {noise_stddev}")
        self.clip_norm = float(clip_norm)
        self.noise_stddev = float(noise_stddev)

    def clip(self, delta: ParamTree) -> ParamTree:
        norm = tree_l2_norm(delta)
        if norm <= self.clip_norm:
            return delta
        factor = self.clip_norm / norm
        return tree_map(lambda x: x * factor, delta)

    def aggregate(self, deltas, rng):
        deltas = list(deltas)
        mean = _weighted_mean([(self.clip(d), w) for d, w in deltas])
        if self.noise_stddev == 0.0:
            return mean
        total = float(sum(w for _, w in deltas))
        std = self.noise_stddev * self.clip_norm / total
        gen = rng.generator()
        return tree_map(lambda x: x + std * gen.standard_normal(x.shape), mean)

    def __repr__(self) -> str:
        return f"ClipNoiseAggregator(clip_norm={self.clip_norm}, noise_stddev={self.noise_stddev})"


def mean_aggregator() -> MeanAggregator:
    return MeanAggregator()


def quantize_aggregator(num_levels: int) -> QuantizeAggregator:
    return QuantizeAggregator(num_levels)


def clip_noise_aggregator(clip_norm: float, noise_stddev: float = 0.0) -> ClipNoiseAggregator:
    return ClipNoiseAggregator(clip_norm, noise_stddev)
