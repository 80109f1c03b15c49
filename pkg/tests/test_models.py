import math

import numpy as np
import pytest
from oracles import central_difference, ce_loss, correct, flatten, relative_error

from fedsim import Batch, BatchSpec, ClientDataset, FederatedData, evaluate, padded_batch
from fedsim.metrics import Accuracy, CrossEntropy, MeanSquaredError, evaluate_batches
from fedsim.models import linear_regression_model, logistic_classifier_model, mlp_model
from fedsim.tensor import Rng, as_tensor


def test_linear_hand_example():
    model = linear_regression_model(1)
    params = {"w": as_tensor([0.5])}
    b = {"x": [[1.0], [2.0]], "y": [1.0, 2.0]}
    loss, grads = model.loss_and_grad(params, b)
    assert loss == 0.625
    assert grads["w"][0] == -2.5


def test_linear_exact_solution():
    model = linear_regression_model(2)
    params = {"w": as_tensor([1.0, -2.0])}
    x = np.array([[1.0, 0.0], [0.5, 1.0]])
    loss, grads = model.loss_and_grad(params, {"x": x, "y": x @ [1.0, -2.0]})
    assert loss == 0.0
    np.testing.assert_array_equal(grads["w"], 0.0)


def test_linear_mask_ignores_padding():
    model = linear_regression_model(1)
    params = {"w": as_tensor([0.5])}
    plain = model.loss_and_grad(params, Batch.full({"x": [[1.0], [2.0]], "y": [1.0, 2.0]}))
    padded = Batch(
        {"x": np.array([[1.0], [2.0], [99.0]]), "y": np.array([1.0, 2.0, -7.0])}, np.array([True, True, False]), 2
    )
    other = model.loss_and_grad(params, padded)
    assert plain[0] == other[0]
    np.testing.assert_array_equal(plain[1]["w"], other[1]["w"])


def test_logistic_uniform_logits():
    model = logistic_classifier_model(3, 4)
    params = model.init(Rng.from_seed(0))
    loss = model.per_example_loss(params, {"x": np.ones((2, 3)), "y": [0.0, 3.0]})
    np.testing.assert_allclose(loss, math.log(4), rtol=0, atol=1e-15)


def test_logistic_confident_loss_tiny():
    model = logistic_classifier_model(1, 2)
    params = {"w": as_tensor([[0.0, 0.0]]), "b": as_tensor([50.0, 0.0])}
    loss = model.per_example_loss(params, {"x": [[0.0]], "y": [0.0]})
    assert 0.0 <= loss[0] < 1e-20


def test_mlp_zero_init_uniform():
    model = mlp_model([4, 5, 3])
    params = {"layer_0": {"w": np.zeros((4, 5)), "b": np.zeros(5)}, "layer_1": {"w": np.zeros((5, 3)), "b": np.zeros(3)}}
    loss = model.per_example_loss(params, {"x": np.random.default_rng(0).normal(size=(6, 4)), "y": [0, 1, 2, 0, 1, 2]})
    np.testing.assert_allclose(loss, math.log(3), atol=1e-15)


def test_mlp_identity_reduces_to_logistic():
    rng = np.random.default_rng(3)
    d, k = 4, 3
    b = rng.normal(size=k)
    x = rng.normal(size=(7, d))
    u = rng.normal(size=(d, 1))
    # rank-1 logistic weights w = u v^T realised as a one-unit hidden layer
    v = rng.normal(size=(1, k))
    logistic = logistic_classifier_model(d, k)
    mlp = mlp_model([d, 1, k], activation="identity")
    lp = {"w": u @ v, "b": b}
    mp = {"layer_0": {"w": u, "b": np.zeros(1)}, "layer_1": {"w": v, "b": b}}
    np.testing.assert_allclose(mlp.apply(mp, {"x": x, "y": np.zeros(7)}), logistic.apply(lp, {"x": x, "y": np.zeros(7)}), rtol=0, atol=1e-12)


def _instance(kind, rng):
    n = int(rng.integers(1, 9))
    if kind == "linear":
        d = int(rng.integers(1, 5))
        model = linear_regression_model(d, use_bias=bool(rng.integers(2)))
        params = {"w": rng.normal(size=d)}
        if model.use_bias:
            params["b"] = np.array(rng.normal())
        b = {"x": rng.normal(size=(n, d)), "y": rng.normal(size=n)}
    elif kind == "logistic":
        d, k = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        model = logistic_classifier_model(d, k)
        params = {"w": rng.normal(size=(d, k)), "b": rng.normal(size=k)}
        b = {"x": rng.normal(size=(n, d)), "y": rng.integers(0, k, size=n).astype(float)}
    else:
        sizes = [int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(2, 4))]
        act = ["tanh", "sigmoid", "identity"][int(rng.integers(3))]
        model = mlp_model(sizes, act)
        params = {
            f"layer_{i}": {"w": rng.normal(size=(a, c)), "b": rng.normal(size=c)}
            for i, (a, c) in enumerate(zip(sizes[:-1], sizes[1:]))
        }
        b = {"x": rng.normal(size=(n, sizes[0])), "y": rng.integers(0, sizes[-1], size=n).astype(float)}
    return model, params, b


@pytest.mark.parametrize("kind", ["linear", "logistic", "mlp"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng({"linear": 1, "logistic": 2, "mlp": 3}[kind])
    worst = 0.0
    for _ in range(100):
        model, params, b = _instance(kind, rng)
        analytic = flatten(model.grad(params, b))
        numeric = central_difference(lambda p: model.loss(p, b), params)
        for path in numeric:
            worst = max(worst, relative_error(analytic[path], numeric[path]))
    assert worst < 1e-5


def test_logistic_fd_3x4():
    rng = np.random.default_rng(11)
    model = logistic_classifier_model(3, 4)
    params = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
    b = {"x": rng.normal(size=(5, 3)), "y": rng.integers(0, 4, size=5).astype(float)}
    analytic = flatten(model.grad(params, b))
    numeric = central_difference(lambda p: model.loss(p, b), params)
    assert max(relative_error(analytic[k], numeric[k]) for k in numeric) < 1e-6


@pytest.mark.parametrize("kind", ["linear", "logistic", "mlp"])
def test_grad_bitwise_invariant_to_pad_contents(kind):
    rng = np.random.default_rng(5)
    model, params, b = _instance(kind, rng)
    n = len(b["y"])
    mask = np.r_[np.ones(n, bool), np.zeros(3, bool)]
    zeros = {k: np.concatenate([np.asarray(v), np.zeros((3,) + np.shape(v)[1:])]) for k, v in b.items()}
    junk = {k: v.copy() for k, v in zeros.items()}
    junk["x"][n:] = 1e6 * rng.normal(size=junk["x"][n:].shape)
    junk["y"][n:] = 1.0
    ga = model.grad(params, Batch(zeros, mask, n))
    gb = model.grad(params, Batch(junk, mask, n))
    for path, leaf in flatten(ga).items():
        np.testing.assert_array_equal(leaf, flatten(gb)[path])
    assert model.loss(params, Batch(zeros, mask, n)) == model.loss(params, Batch(junk, mask, n))


def test_cross_entropy_nonnegative():
    rng = np.random.default_rng(0)
    model = logistic_classifier_model(3, 5)
    for _ in range(50):
        params = {"w": 30 * rng.normal(size=(3, 5)), "b": 30 * rng.normal(size=5)}
        loss = model.per_example_loss(params, {"x": rng.normal(size=(8, 3)), "y": rng.integers(0, 5, 8).astype(float)})
        assert np.all(loss >= 0)


def _classifier_fd(labels_per_client):
    clients = {}
    for cid, (xs, ys) in labels_per_client.items():
        clients[cid] = ClientDataset({"x": np.asarray(xs, float)[:, None], "y": np.asarray(ys, float)})
    return FederatedData(clients)


def test_evaluate_accuracy_hand_counts():
    # logits = [x, -x]: predicts class 0 when x > 0
    model = logistic_classifier_model(1, 2)
    params = {"w": as_tensor([[1.0, -1.0]]), "b": as_tensor([0.0, 0.0])}
    fd = _classifier_fd({"a": ([1.0, 1.0, -1.0], [0, 0, 0])})
    report = evaluate(model, params, fd, [Accuracy()], BatchSpec(2))
    assert report.per_client["a"]["accuracy"] == pytest.approx(2 / 3, abs=1e-15)
    assert report.overall["accuracy"] == pytest.approx(2 / 3, abs=1e-15)

    fd = _classifier_fd({"a": ([1.0], [0]), "b": ([1.0, 2.0, 3.0], [1, 1, 1])})
    report = evaluate(model, params, fd, [Accuracy()], BatchSpec(4))
    assert report.per_client == {"a": {"accuracy": 1.0}, "b": {"accuracy": 0.0}}
    assert report.overall["accuracy"] == 0.25
    assert report.example_counts == {"a": 1, "b": 3}

    fd = _classifier_fd({"a": ([1.0, 2.0], [0, 0]), "b": ([-1.0], [1])})
    report = evaluate(model, params, fd, [Accuracy()], BatchSpec(4))
    assert all(v["accuracy"] == 1.0 for v in report.per_client.values())
    assert report.overall["accuracy"] == 1.0


def test_overall_is_weighted_mean_of_clients():
    rng = np.random.default_rng(9)
    model = logistic_classifier_model(2, 3)
    params = {"w": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}
    clients = {
        f"c{i}": ClientDataset({"x": rng.normal(size=(n, 2)), "y": rng.integers(0, 3, n).astype(float)})
        for i, n in enumerate([1, 4, 7, 13])
    }
    fd = FederatedData(clients)
    report = evaluate(model, params, fd, [Accuracy(), CrossEntropy()], BatchSpec(4))
    total = sum(report.example_counts.values())
    for name in ("accuracy", "cross_entropy"):
        weighted = sum(report.per_client[c][name] * report.example_counts[c] for c in fd.client_ids()) / total
        assert abs(weighted - report.overall[name]) <= 1e-12


def test_evaluate_matches_per_example_loop():
    rng = np.random.default_rng(21)
    model = logistic_classifier_model(3, 4)
    params = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
    for _ in range(20):
        n = int(rng.integers(1, 51))
        x, y = rng.normal(size=(n, 3)), rng.integers(0, 4, n).astype(float)
        fd = FederatedData({"c": ClientDataset({"x": x, "y": y})})
        report = evaluate(model, params, fd, [Accuracy(), CrossEntropy()], BatchSpec(8))
        logits = [np.asarray(params["w"]).T @ xi + params["b"] for xi in x]
        assert abs(report.overall["accuracy"] - np.mean([correct(z, t) for z, t in zip(logits, y)])) <= 1e-12
        assert abs(report.overall["cross_entropy"] - np.mean([ce_loss(z, t) for z, t in zip(logits, y)])) <= 1e-12


def test_metric_pad_contents_bitwise():
    rng = np.random.default_rng(4)
    model = linear_regression_model(2)
    params = {"w": rng.normal(size=2)}
    ds = ClientDataset({"x": rng.normal(size=(5, 2)), "y": rng.normal(size=5)})
    batches = padded_batch(ds, BatchSpec(4))
    tampered = []
    for b in batches:
        cols = {k: np.array(v) for k, v in b.columns.items()}
        for v in cols.values():
            v[~b.mask] = 123.456
        tampered.append(Batch(cols, b.mask, b.num_real))
    assert evaluate_batches(model, params, batches, [MeanSquaredError()]) == evaluate_batches(
        model, params, tampered, [MeanSquaredError()]
    )
