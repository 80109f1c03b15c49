import numpy as np
import pytest
from hypothesis import settings

from fedsim import ClientDataset, FederatedData

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def scalar_client(x=1.0, y=1.0):
    return ClientDataset({"x": [[x]], "y": [y]})


@pytest.fixture
def one_client_fd():
    return FederatedData({"c0": scalar_client()})


def random_fd(seed, num_clients=5, d=3, low=1, high=12):
    rng = np.random.default_rng(seed)
    clients = {}
    for i in range(num_clients):
        n = int(rng.integers(low, high + 1))
        clients[f"c{i:02d}"] = ClientDataset({"x": rng.normal(size=(n, d)), "y": rng.normal(size=n)})
    return FederatedData(clients)
