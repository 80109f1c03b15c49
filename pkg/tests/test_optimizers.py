import numpy as np
import pytest
from oracles import adagrad_scalar, adam_scalar, yogi_scalar

from fedsim.exceptions import InvalidHyperparameter
from fedsim.optimizers import adagrad, adam, get_optimizer, sgd, yogi
from fedsim.tensor import as_tensor, is_congruent


def run(opt, gs, lr, p0=0.0):
    p = as_tensor(p0)
    state = opt.init(p)
    out = []
    for g in gs:
        p, state = opt.step(as_tensor(g), state, p, lr)
        out.append(float(p))
    return out, state


def test_sgd_examples():
    assert run(sgd(), [-2.5], 0.1, 0.5)[0] == [0.75]
    assert run(sgd(), [0.0], 0.1, 0.5)[0] == [0.5]
    assert run(sgd(), [3.0], 0.0, 0.5)[0] == [0.5]


@pytest.mark.parametrize("alpha", [0.25, 0.5, 2.0, 4.0])
def test_sgd_linearity(alpha):
    rng = np.random.default_rng(0)
    opt = sgd()
    p, g = as_tensor(rng.normal(size=5)), rng.normal(size=5)
    a, _ = opt.step(as_tensor(alpha * g), opt.init(p), p, 0.1)
    b, _ = opt.step(as_tensor(g), opt.init(p), p, alpha * 0.1)
    np.testing.assert_array_equal(a, b)


def test_adam_first_step():
    (p,), _ = run(adam(), [1.0], 0.1)
    assert abs(p + 0.1) < 1e-8


def test_adagrad_first_step():
    (p,), state = run(adagrad(), [2.0], 0.1)
    assert float(state.slots["accumulator"]) == 4.0
    assert abs(p - adagrad_scalar([2.0], 0.1)[0]) <= 1e-15


@pytest.mark.parametrize("make", [sgd, adagrad, adam, yogi])
def test_zero_gradient_first_step(make):
    out, state = run(make(), [0.0], 0.3, 1.25)
    assert out == [1.25]
    assert state.step == 1


@pytest.mark.parametrize(
    "make,oracle", [(adagrad, adagrad_scalar), (adam, adam_scalar), (yogi, yogi_scalar)]
)
def test_scalar_oracle_sequences(make, oracle):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(1000):
        length = int(rng.integers(1, 20))
        gs = [float(g) for g in rng.normal(scale=rng.uniform(0.01, 10), size=length)]
        lr = float(rng.uniform(1e-3, 1.0))
        p0 = float(rng.normal())
        got, state = run(make(), gs, lr, p0)
        want = oracle(gs, lr, p=p0)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
        assert state.step == length
    assert worst <= 1e-12


def test_congruent_outputs_and_monotone_accumulator():
    rng = np.random.default_rng(1)
    params = {"a": as_tensor(rng.normal(size=(2, 3))), "b": {"c": as_tensor(rng.normal(size=4))}}
    for opt in (sgd(), adagrad(), adam(), yogi()):
        state = opt.init(params)
        p = params
        prev = None
        for _ in range(5):
            grads = {"a": as_tensor(rng.normal(size=(2, 3))), "b": {"c": as_tensor(rng.normal(size=4))}}
            p, state = opt.step(grads, state, p, 0.1)
            assert is_congruent(p, params)
            for slot in state.slots.values():
                assert is_congruent(slot, params)
            if opt.name == "adagrad":
                acc = state.slots["accumulator"]
                if prev is not None:
                    assert np.all(acc["a"] >= prev["a"]) and np.all(acc["b"]["c"] >= prev["b"]["c"])
                prev = acc
        assert state.step == 5


def test_step_is_pure():
    opt = adam()
    p = as_tensor([1.0, 2.0])
    state = opt.init(p)
    a = opt.step(as_tensor([0.5, -1.0]), state, p, 0.1)
    b = opt.step(as_tensor([0.5, -1.0]), state, p, 0.1)
    np.testing.assert_array_equal(a[0], b[0])
    assert state.step == 0


@pytest.mark.parametrize("kwargs", [{"b1": 1.0}, {"b2": -0.1}, {"eps": 0.0}])
def test_invalid_hyperparameters(kwargs):
    with pytest.raises(InvalidHyperparameter):
        adam(**kwargs)
    with pytest.raises(InvalidHyperparameter):
        yogi(**kwargs)


def test_registry():
    assert get_optimizer("yogi", eps=1e-4).eps == 1e-4
    with pytest.raises(ValueError):
        get_optimizer("lamb")
