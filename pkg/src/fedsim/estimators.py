"""scikit-learn style wrappers: fit a federated model on ``(X, y, clients)``.

The ``clients`` array assigns every row to a client; rows sharing a value
form one client dataset. Without it the whole sample is a single client,
which makes federated averaging plain minibatch SGD.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .aggregators import mean_aggregator
from .algorithms import ClientUpdateConfig, fed_opt
from .data import ClientDataset, FederatedData
from .models import linear_regression_model, logistic_classifier_model, mlp_model
from .optimizers import get_optimizer

__all__ = ["FedAvgClassifier", "FedAvgRegressor", "federated_from_arrays"]


def federated_from_arrays(X, y, clients=None) -> FederatedData:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if clients is None:
        return FederatedData({"all": ClientDataset({"x": X, "y": y})})
    clients = np.asarray(clients)
    if clients.shape != (X.shape[0],):
        raise ValueError(f"clients must have shape ({X.shape[0]},), got {clients.shape}")
    groups = {}
    for key in np.unique(clients):
        rows = np.flatnonzero(clients == key)
        groups[str(key)] = ClientDataset({"x": X[rows], "y": y[rows]})
    if len(groups) != len(np.unique(clients.astype(str))):
        raise ValueError("client labels collide after conversion to strings")
    return FederatedData(groups)


class _FedAvgBase(BaseEstimator):
    def _train(self, model, fd: FederatedData):
        cfg = ClientUpdateConfig(self.batch_size, self.num_epochs, self.client_lr)
        server_opt = get_optimizer(self.server_optimizer)
        c = min(self.clients_per_round, len(fd))
        state, history = fed_opt(
            model, cfg, server_opt, self.server_lr, mean_aggregator(), fd, c, self.rounds,
            self.random_state, backend=self.backend,
        )
        self.params_ = state.server_params
        self.history_ = [(d.round_index, d.train_loss) for d in history]
        self.n_features_in_ = model.num_features
        self._model = model


class FedAvgRegressor(RegressorMixin, _FedAvgBase):
    """Linear least squares trained by federated averaging."""

    def __init__(
        self,
        batch_size=10,
        num_epochs=1,
        client_lr=0.1,
        server_lr=1.0,
        server_optimizer="sgd",
        clients_per_round=10,
        rounds=100,
        fit_intercept=True,
        backend="sequential",
        random_state=0,
    ):
        self.batch_size = batch_size
        self.num_epochs = num_epochs
        self.client_lr = client_lr
        self.server_lr = server_lr
        self.server_optimizer = server_optimizer
        self.clients_per_round = clients_per_round
        self.rounds = rounds
        self.fit_intercept = fit_intercept
        self.backend = backend
        self.random_state = random_state

    def fit(self, X, y, clients=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self._train(linear_regression_model(X.shape[1], self.fit_intercept), federated_from_arrays(X, y, clients))
        self.coef_ = np.array(self.params_["w"])
        self.intercept_ = float(self.params_["b"]) if self.fit_intercept else 0.0
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


class FedAvgClassifier(ClassifierMixin, _FedAvgBase):
    """Softmax classifier (``hidden_layer_sizes=()``) or MLP trained by federated averaging."""

    def __init__(
        self,
        hidden_layer_sizes=(),
        activation="tanh",
        batch_size=10,
        num_epochs=1,
        client_lr=0.1,
        server_lr=1.0,
        server_optimizer="sgd",
        clients_per_round=10,
        rounds=100,
        backend="sequential",
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.batch_size = batch_size
        self.num_epochs = num_epochs
        self.client_lr = client_lr
        self.server_lr = server_lr
        self.server_optimizer = server_optimizer
        self.clients_per_round = clients_per_round
        self.rounds = rounds
        self.backend = backend
        self.random_state = random_state

    def fit(self, X, y, clients=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        k = len(self.classes_)
        if self.hidden_layer_sizes:
            model = mlp_model([X.shape[1], *self.hidden_layer_sizes, k], self.activation)
        else:
            model = logistic_classifier_model(X.shape[1], k)
        self._train(model, federated_from_arrays(X, encoded, clients))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._model.apply(self.params_, {"x": X, "y": np.zeros(len(X))})

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
