"""Models with hand-derived gradients over parameter trees.

Every model reads features from the ``"x"`` column and targets from ``"y"``.
Losses are reduced with a masked mean: padded rows are zeroed before any
arithmetic and excluded from the denominator, so their contents can never
leak into a loss or gradient.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .data import Batch
from .tensor import ParamTree, Rng, as_tensor

__all__ = [
    "ACTIVATIONS",
    "LinearRegression",
    "LogisticClassifier",
    "MLPClassifier",
    "Model",
    "linear_regression_model",
    "logistic_classifier_model",
    "mlp_model",
    "softmax_cross_entropy",
]


def _as_batch(batch, mask=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Return ``(x, y, mask, num_real)`` with masked-out rows zeroed."""
    if isinstance(batch, Batch):
        cols, default_mask = batch.columns, batch.mask
    else:
        cols = batch
        default_mask = None
    x = np.asarray(cols["x"], dtype=np.float64)
    y = np.asarray(cols["y"], dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if mask is None:
        mask = default_mask if default_mask is not None else np.ones(x.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.all():
        x = np.where(mask[:, None], x, 0.0)
        y = np.where(mask.reshape((-1,) + (1,) * (y.ndim - 1)), y, 0.0)
    return x, y, mask, int(mask.sum())


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example cross-entropy and softmax probabilities.

    Computed as ``(max - z_y) + log1p(sum_{j != argmax} exp(z_j - max))`` so
    that a confidently correct prediction yields a loss that underflows
    gracefully toward 0 instead of cancelling to exactly 0 via ``log(1.0)``.
    """
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    zmax = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - zmax)
    top = np.argmax(logits, axis=1)
    rows = np.arange(logits.shape[0])
    rest = shifted.sum(axis=1) - shifted[rows, top]
    loss = (zmax[:, 0] - logits[rows, labels]) + np.log1p(rest)
    probs = shifted / shifted.sum(axis=1, keepdims=True)
    return loss, probs


class Model:
    """Base interface: ``init``, ``apply``, ``per_example_loss`` and ``grad``."""

    def init(self, rng: Rng) -> ParamTree:
        raise NotImplementedError

    def apply(self, params: ParamTree, batch) -> np.ndarray:
        raise NotImplementedError

    def per_example_loss(self, params: ParamTree, batch) -> np.ndarray:
        return self._loss_and_grad(params, batch, None, want_grad=False)[0]

    def loss(self, params: ParamTree, batch, mask=None) -> float:
        """Masked mean of the per-example loss."""
        return self.loss_and_grad(params, batch, mask)[0]

    def grad(self, params: ParamTree, batch, mask=None) -> ParamTree:
        return self.loss_and_grad(params, batch, mask)[1]

    def loss_and_grad(self, params: ParamTree, batch, mask=None) -> tuple[float, ParamTree]:
        per_example, grads, num_real, mask = self._loss_and_grad(params, batch, mask, want_grad=True)
        total = float(np.sum(np.where(mask, per_example, 0.0)))
        return (total / num_real if num_real else 0.0), grads

    def _loss_and_grad(self, params, batch, mask, want_grad):
        raise NotImplementedError


class LinearRegression(Model):
    """Squared-error linear regression; params ``{"w": (d,)}`` plus ``"b"`` if ``use_bias``."""

    def __init__(self, num_features: int, use_bias: bool = False):
        if num_features < 1:
            raise ValueError("num_features must be >= 1")
        self.num_features = int(num_features)
        self.use_bias = bool(use_bias)

    def init(self, rng: Rng | None = None) -> ParamTree:
        params = {"w": as_tensor(np.zeros(self.num_features))}
        if self.use_bias:
            params["b"] = as_tensor(0.0)
        return params

    def _predict(self, params, x):
        out = x @ np.asarray(params["w"])
        if self.use_bias:
            out = out + float(params["b"])
        return out

    def apply(self, params, batch):
        x, _, _, _ = _as_batch(batch)
        return self._predict(params, x)

    def _loss_and_grad(self, params, batch, mask, want_grad):
        x, y, mask, num_real = _as_batch(batch, mask)
        residual = np.where(mask, self._predict(params, x) - y, 0.0)
        per_example = residual**2
        if not want_grad:
            return per_example, None, num_real, mask
        scale = 2.0 / num_real if num_real else 0.0
        grads = {"w": as_tensor(scale * (x.T @ residual))}
        if self.use_bias:
            grads["b"] = as_tensor(scale * residual.sum())
        return per_example, grads, num_real, mask


class LogisticClassifier(Model):
    """Multinomial logistic regression; params ``{"w": (d, K), "b": (K,)}``."""

    def __init__(self, num_features: int, num_classes: int):
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if num_features < 1:
            raise ValueError("num_features must be >= 1")
        self.num_features = int(num_features)
        self.num_classes = int(num_classes)

    def init(self, rng: Rng | None = None) -> ParamTree:
        return {
            "w": as_tensor(np.zeros((self.num_features, self.num_classes))),
            "b": as_tensor(np.zeros(self.num_classes)),
        }

    def apply(self, params, batch):
        x, _, _, _ = _as_batch(batch)
        return x @ np.asarray(params["w"]) + np.asarray(params["b"])

    def _loss_and_grad(self, params, batch, mask, want_grad):
        x, y, mask, num_real = _as_batch(batch, mask)
        logits = x @ np.asarray(params["w"]) + np.asarray(params["b"])
        per_example, probs = softmax_cross_entropy(logits, y)
        per_example = np.where(mask, per_example, 0.0)
        if not want_grad:
            return per_example, None, num_real, mask
        dlogits = probs
        dlogits[np.arange(len(y)), y.astype(np.int64)] -= 1.0
        dlogits = np.where(mask[:, None], dlogits, 0.0) / (num_real or 1)
        grads = {"w": as_tensor(x.T @ dlogits), "b": as_tensor(dlogits.sum(axis=0))}
        return per_example, grads, num_real, mask


def _tanh_grad(z, a):
    return 1.0 - a * a


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(np.float64)),
    "tanh": (np.tanh, _tanh_grad),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


class MLPClassifier(Model):
    """Dense network with a softmax cross-entropy head.

    ``layer_sizes`` is ``[num_features, hidden..., num_classes]``; params are
    ``{"layer_0": {"w", "b"}, "layer_1": {...}, ...}``.
    """

    def __init__(self, layer_sizes: Sequence[int], activation: str = "tanh"):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 3:
            raise ValueError("mlp needs at least one hidden layer: [in, hidden..., out]")
        if any(s < 1 for s in layer_sizes) or layer_sizes[-1] < 2:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        self.layer_sizes = layer_sizes
        self.activation = activation
        self.num_features = layer_sizes[0]
        self.num_classes = layer_sizes[-1]

    def init(self, rng: Rng) -> ParamTree:
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.split(f"layer_{i}").generator().uniform(-limit, limit, size=(fan_in, fan_out))
            params[f"layer_{i}"] = {"w": as_tensor(w), "b": as_tensor(np.zeros(fan_out))}
        return params

    def _forward(self, params: Mapping, x: np.ndarray):
        act, _ = ACTIVATIONS[self.activation]
        pre, post = [], [x]
        h = x
        last = len(self.layer_sizes) - 2
        for i in range(last + 1):
            layer = params[f"layer_{i}"]
            z = h @ np.asarray(layer["w"]) + np.asarray(layer["b"])
            if i < last:
                pre.append(z)
                h = act(z)
                post.append(h)
            else:
                h = z
        return h, pre, post

    def apply(self, params, batch):
        x, _, _, _ = _as_batch(batch)
        return self._forward(params, x)[0]

    def _loss_and_grad(self, params, batch, mask, want_grad):
        x, y, mask, num_real = _as_batch(batch, mask)
        logits, pre, post = self._forward(params, x)
        per_example, probs = softmax_cross_entropy(logits, y)
        per_example = np.where(mask, per_example, 0.0)
        if not want_grad:
            return per_example, None, num_real, mask
        _, act_grad = ACTIVATIONS[self.activation]
        delta = probs
        delta[np.arange(len(y)), y.astype(np.int64)] -= 1.0
        delta = np.where(mask[:, None], delta, 0.0) / (num_real or 1)
        grads = {}
        for i in range(len(self.layer_sizes) - 2, -1, -1):
            w = np.asarray(params[f"layer_{i}"]["w"])
            grads[f"layer_{i}"] = {"w": as_tensor(post[i].T @ delta), "b": as_tensor(delta.sum(axis=0))}
            if i > 0:
                delta = (delta @ w.T) * act_grad(pre[i - 1], post[i])
        return per_example, dict(reversed(grads.items())), num_real, mask


def linear_regression_model(num_features: int, use_bias: bool = False) -> LinearRegression:
    return LinearRegression(num_features, use_bias)


def logistic_classifier_model(num_features: int, num_classes: int) -> LogisticClassifier:
    return LogisticClassifier(num_features, num_classes)


def mlp_model(layer_sizes: Sequence[int], activation: str = "tanh") -> MLPClassifier:
    return MLPClassifier(layer_sizes, activation)
