"""Reproducible synthetic federated datasets with size and label skew."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClientDataset, FederatedData
from .exceptions import InvalidSpec
from .tensor import Rng

__all__ = ["SyntheticFedSpec", "client_id", "generate_synthetic"]

TASKS = ("linear", "classification")
SIZE_DISTRIBUTIONS = ("fixed", "lognormal")


@dataclass(frozen=True)
class SyntheticFedSpec:
    """Parameters of a synthetic federated dataset.

    Linear task: ``y = <w* + shift_k, x> + N(0, noise_std^2)`` with
    ``x ~ N(0, I)``, ``w* ~ N(0, I)`` and ``shift_k ~ N(0, shift_std^2 I)``.

    Classification task: each client draws class priors from
    ``Dirichlet(label_alpha)``; features are ``class_mean[y] + N(0, I)`` with
    class means ``~ N(0, class_sep^2 I)``. Small ``label_alpha`` gives strong
    label skew.

    Client sizes are either ``examples_per_client`` for every client or
    ``max(1, round(exp(N(size_mu, size_sigma^2))))``.
    """

    num_clients: int
    task: str = "linear"
    num_features: int = 10
    size_distribution: str = "fixed"
    examples_per_client: int = 20
    size_mu: float = 3.0
    size_sigma: float = 1.0
    noise_std: float = 0.0
    shift_std: float = 0.0
    num_classes: int = 10
    label_alpha: float = 0.5
    class_sep: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_clients < 1:
            raise InvalidSpec(f"num_clients must be >= 1, got {self.num_clients}")
        if self.task not in TASKS:
            raise InvalidSpec(f"task must be one of {TASKS}, got {self.task!r}")
        if self.size_distribution not in SIZE_DISTRIBUTIONS:
            raise InvalidSpec(f"size_distribution must be one of {SIZE_DISTRIBUTIONS}, got {self.size_distribution!r}")
        if self.num_features < 1:
            raise InvalidSpec("num_features must be >= 1")
        if self.size_distribution == "fixed" and self.examples_per_client < 1:
            raise InvalidSpec("examples_per_client must be >= 1")
        if self.size_sigma < 0 or self.noise_std < 0 or self.shift_std < 0 or self.class_sep < 0:
            raise InvalidSpec("standard deviations must be >= 0")
        if self.task == "classification":
            if self.num_classes < 2:
                raise InvalidSpec("num_classes must be >= 2")
            if not self.label_alpha > 0:
                raise InvalidSpec("label_alpha must be > 0")


def client_id(index: int, num_clients: int) -> str:
    width = max(4, len(str(num_clients - 1)))
    return f"client_{index:0{width}d}"


def _client_size(spec: SyntheticFedSpec, rng: Rng) -> int:
    if spec.size_distribution == "fixed":
        return spec.examples_per_client
    draw = rng.generator().normal(spec.size_mu, spec.size_sigma)
    return max(1, int(round(float(np.exp(draw)))))


def generate_synthetic(spec: SyntheticFedSpec) -> FederatedData:
    """Build a federated dataset; identical specs give identical data."""
    spec.validate()
    root = Rng.from_seed(spec.seed).split("synthetic")
    d = spec.num_features
    clients = {}
    if spec.task == "linear":
        true_w = root.split("true_weights").normal(d)
        metadata = {"true_weights": true_w}
        for i in range(spec.num_clients):
            cid = client_id(i, spec.num_clients)
            crng = root.split("client").split(cid)
            n = _client_size(spec, crng.split("size"))
            gen = crng.split("data").generator()
            shift = spec.shift_std * gen.standard_normal(d)
            x = gen.standard_normal((n, d))
            y = x @ (true_w + shift) + spec.noise_std * gen.standard_normal(n)
            clients[cid] = ClientDataset({"x": x, "y": y})
    else:
        k = spec.num_classes
        means = spec.class_sep * root.split("class_means").normal((k, d))
        priors = np.empty((spec.num_clients, k))
        for i in range(spec.num_clients):
            cid = client_id(i, spec.num_clients)
            crng = root.split("client").split(cid)
            n = _client_size(spec, crng.split("size"))
            gen = crng.split("data").generator()
            priors[i] = gen.dirichlet(np.full(k, spec.label_alpha))
            labels = gen.choice(k, size=n, p=priors[i])
            x = means[labels] + gen.standard_normal((n, d))
            clients[cid] = ClientDataset({"x": x, "y": labels.astype(np.float64)})
        metadata = {"class_means": means, "label_priors": priors}
    return FederatedData(clients, metadata)
