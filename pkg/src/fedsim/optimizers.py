"""First-order optimizers over parameter trees.

The learning rate is an argument of :meth:`Optimizer.step` rather than part of
the optimizer, so one optimizer value can serve as a client optimizer and as a
server optimizer with different rates. ``step`` is pure.

Adaptive rules follow the server optimizers of adaptive federated
optimization:

* adagrad  ``v += g^2;  p -= lr * g / (sqrt(v) + eps)``
* adam     bias-corrected first and second moments
* yogi     ``v -= (1 - b2) * sign(v - g^2) * g^2``, no bias correction
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import InvalidHyperparameter
from .tensor import ParamTree, is_congruent, tree_multimap, tree_zeros_like

__all__ = ["OPTIMIZERS", "OptState", "Optimizer", "adagrad", "adam", "get_optimizer", "sgd", "yogi"]


@dataclass(frozen=True)
class OptState:
    slots: Mapping[str, ParamTree] = field(default_factory=dict)
    step: int = 0


class Optimizer:
    name = "optimizer"
    slot_names: tuple[str, ...] = ()

    def init(self, params: ParamTree) -> OptState:
        return OptState({name: tree_zeros_like(params) for name in self.slot_names}, 0)

    def step(
        self, grads: ParamTree, state: OptState, params: ParamTree, lr: float
    ) -> tuple[ParamTree, OptState]:
        raise NotImplementedError

    def _check(self, grads, state, params):
        for name in self.slot_names:
            if not is_congruent(state.slots[name], params):
                raise ValueError(f"optimizer slot {name!r} is not congruent with params")


class SGD(Optimizer):
    name = "sgd"

    def step(self, grads, state, params, lr):
        lr = float(lr)
        new_params = tree_multimap(lambda p, g: p - lr * g, params, grads)
        return new_params, OptState({}, state.step + 1)


def _check_beta(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value < 1.0:
        raise InvalidHyperparameter(f"{name} must be in [0, 1), got {value}")
    return value


def _check_eps(value: float) -> float:
    value = float(value)
    if not value > 0.0:
        raise InvalidHyperparameter(f"eps must be > 0, got {value}")
    return value


class Adagrad(Optimizer):
    name = "adagrad"
    slot_names = ("accumulator",)

    def __init__(self, eps: float = 1e-3):
        self.eps = _check_eps(eps)

    def step(self, grads, state, params, lr):
        self._check(grads, state, params)
        lr, eps = float(lr), self.eps
        acc = tree_multimap(lambda v, g: v + g * g, state.slots["accumulator"], grads)
        new_params = tree_multimap(lambda p, g, v: p - lr * g / (np.sqrt(v) + eps), params, grads, acc)
        return new_params, OptState({"accumulator": acc}, state.step + 1)


class Adam(Optimizer):
    name = "adam"
    slot_names = ("m", "v")

    def __init__(self, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.b1 = _check_beta("b1", b1)
        self.b2 = _check_beta("b2", b2)
        self.eps = _check_eps(eps)

    def step(self, grads, state, params, lr):
        self._check(grads, state, params)
        b1, b2, eps, lr = self.b1, self.b2, self.eps, float(lr)
        t = state.step + 1
        m = tree_multimap(lambda m, g: b1 * m + (1.0 - b1) * g, state.slots["m"], grads)
        v = tree_multimap(lambda v, g: b2 * v + (1.0 - b2) * (g * g), state.slots["v"], grads)
        c1, c2 = 1.0 - b1**t, 1.0 - b2**t
        new_params = tree_multimap(
            lambda p, m, v: p - lr * (m / c1) / (np.sqrt(v / c2) + eps), params, m, v
        )
        return new_params, OptState({"m": m, "v": v}, t)


class Yogi(Optimizer):
    name = "yogi"
    slot_names = ("m", "v")

    def __init__(self, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-3):
        self.b1 = _check_beta("b1", b1)
        self.b2 = _check_beta("b2", b2)
        self.eps = _check_eps(eps)

    def step(self, grads, state, params, lr):
        self._check(grads, state, params)
        b1, b2, eps, lr = self.b1, self.b2, self.eps, float(lr)
        m = tree_multimap(lambda m, g: b1 * m + (1.0 - b1) * g, state.slots["m"], grads)

        def second_moment(v, g):
            g2 = g * g
            return v - (1.0 - b2) * np.sign(v - g2) * g2

        v = tree_multimap(second_moment, state.slots["v"], grads)
        new_params = tree_multimap(lambda p, m, v: p - lr * m / (np.sqrt(v) + eps), params, m, v)
        return new_params, OptState({"m": m, "v": v}, state.step + 1)


def sgd() -> SGD:
    return SGD()


def adagrad(eps: float = 1e-3) -> Adagrad:
    return Adagrad(eps)


def adam(b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> Adam:
    return Adam(b1, b2, eps)


def yogi(b1: float = 0.9, b2: float = 0.999, eps: float = 1e-3) -> Yogi:
    return Yogi(b1, b2, eps)


OPTIMIZERS = {"sgd": sgd, "adagrad": adagrad, "adam": adam, "yogi": yogi}


def get_optimizer(name: str, **options) -> Optimizer:
    try:
        factory = OPTIMIZERS[name]
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None
    return factory(**options)
