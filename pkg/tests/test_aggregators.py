import numpy as np
import pytest
from oracles import stochastic_quantize_mean

from fedsim.aggregators import (
    clip_noise_aggregator,
    mean_aggregator,
    quantize_aggregator,
    stochastic_quantize,
)
from fedsim.exceptions import EmptyCohort, ZeroTotalWeight
from fedsim.tensor import Rng, as_tensor, tree_equal, tree_l2_norm


def leaf(*v):
    return as_tensor(np.array(v, dtype=np.float64))


def test_mean_examples():
    agg = mean_aggregator()
    assert float(agg.aggregate([(as_tensor(-0.1), 1.0)])) == -0.1
    assert float(agg.aggregate([(as_tensor(1.0), 2.0), (as_tensor(3.0), 1.0)])) == pytest.approx(5 / 3, abs=1e-15)
    d = {"a": leaf(0.3, -1.7)}
    assert tree_equal(agg.aggregate([(d, 1.0), (d, 7.0), (d, 0.5)]), d)


def test_mean_errors():
    with pytest.raises(EmptyCohort):
        mean_aggregator().aggregate([])
    with pytest.raises(ZeroTotalWeight):
        mean_aggregator().aggregate([(leaf(1.0), 0.0)])


def test_mean_scale_invariance_power_of_two():
    rng = np.random.default_rng(0)
    deltas = [leaf(*rng.normal(size=4)) for _ in range(6)]
    ns = rng.integers(1, 50, size=6).astype(float)
    a = mean_aggregator().aggregate(list(zip(deltas, ns)))
    b = mean_aggregator().aggregate(list(zip(deltas, 8.0 * ns)))
    np.testing.assert_array_equal(a, b)


def test_mean_scale_invariance_general():
    rng = np.random.default_rng(1)
    for _ in range(100):
        deltas = [leaf(*rng.normal(size=3)) for _ in range(5)]
        ns = rng.integers(1, 50, size=5).astype(float)
        alpha = rng.uniform(0.1, 10)
        a = mean_aggregator().aggregate(list(zip(deltas, ns)))
        b = mean_aggregator().aggregate(list(zip(deltas, alpha * ns)))
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_mean_convexity():
    rng = np.random.default_rng(2)
    for _ in range(200):
        deltas = [leaf(*rng.normal(size=5)) for _ in range(4)]
        out = mean_aggregator().aggregate([(d, float(n)) for d, n in zip(deltas, rng.integers(1, 9, 4))])
        stack = np.stack(deltas)
        ulp = np.spacing(np.abs(stack).max(axis=0))
        assert np.all(out >= stack.min(axis=0) - 4 * ulp) and np.all(out <= stack.max(axis=0) + 4 * ulp)


def test_quantize_grid_fixed_point():
    d = {"a": leaf(0.0, 0.25, 0.5, 1.0)}
    for seed in range(20):
        out = quantize_aggregator(5).aggregate([(d, 3.0)], Rng.from_seed(seed))
        np.testing.assert_array_equal(out["a"], d["a"])


def test_quantize_unbiased_scalar():
    # leaf spans [0, 1] so the levels are exactly {0, 1}
    agg = quantize_aggregator(2)
    d = leaf(0.0, 1.0, 0.3)
    draws = np.array([agg.aggregate([(d, 1.0)], Rng.from_seed(0).split(i))[2] for i in range(20000)])
    assert set(np.unique(draws)) <= {0.0, 1.0}
    assert abs(draws.mean() - 0.3) < 0.01


def test_stochastic_quantize_matches_oracle_mean():
    gen = np.random.default_rng(0)
    values = np.full(100000, 0.37)
    ours = stochastic_quantize(values, -1.0, 2.0, 7, gen).mean()
    ref = stochastic_quantize_mean(0.37, -1.0, 2.0, 7, 100000, np.random.default_rng(1))
    assert abs(ours - 0.37) < 0.01 and abs(ref - 0.37) < 0.01


def test_quantize_fine_levels_close_to_mean():
    rng = np.random.default_rng(3)
    deltas = [({"w": leaf(*rng.normal(size=6)), "b": leaf(rng.normal())}, float(n)) for n in rng.integers(1, 30, 8)]
    exact = mean_aggregator().aggregate(deltas)
    approx = quantize_aggregator(2**20).aggregate(deltas, Rng.from_seed(0))
    for k in exact:
        assert np.max(np.abs(exact[k] - approx[k])) < 1e-5


def test_quantize_deterministic_given_rng():
    d = [(leaf(0.1, 0.7, -0.4), 2.0), (leaf(0.3, 0.2, 0.9), 1.0)]
    a = quantize_aggregator(4).aggregate(d, Rng.from_seed(5))
    b = quantize_aggregator(4).aggregate(d, Rng.from_seed(5))
    np.testing.assert_array_equal(a, b)


def test_clip_noise_no_op_regime_bitwise():
    rng = np.random.default_rng(4)
    deltas = [(leaf(*rng.uniform(-0.1, 0.1, 4)), float(n)) for n in rng.integers(1, 10, 5)]
    out = clip_noise_aggregator(10.0, 0.0).aggregate(deltas, Rng.from_seed(0))
    np.testing.assert_array_equal(out, mean_aggregator().aggregate(deltas))


def test_clip_scales_to_norm():
    d = {"a": leaf(3.0, 4.0), "b": leaf(0.0)}  # norm 5
    out = clip_noise_aggregator(2.5, 0.0).aggregate([(d, 1.0)], Rng.from_seed(0))
    assert tree_l2_norm(out) == pytest.approx(2.5, rel=1e-15)


def test_clip_noise_reproducible_and_centered():
    d = [(leaf(0.5, -0.5), 3.0), (leaf(1.0, 2.0), 1.0)]
    agg = clip_noise_aggregator(1.0, 0.8)
    a = agg.aggregate(d, Rng.from_seed(9))
    np.testing.assert_array_equal(a, agg.aggregate(d, Rng.from_seed(9)))
    base = clip_noise_aggregator(1.0, 0.0).aggregate(d, None)
    draws = np.stack([agg.aggregate(d, Rng.from_seed(1).split(i)) for i in range(10000)])
    std = 0.8 * 1.0 / 4.0
    se = std / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - base) < 3 * se)
    assert draws.std(axis=0) == pytest.approx([std, std], rel=0.05)


def test_invalid_aggregator_params():
    with pytest.raises(ValueError):
        quantize_aggregator(1)
    with pytest.raises(ValueError):
        clip_noise_aggregator(0.0)
    with pytest.raises(ValueError):
        clip_noise_aggregator(1.0, -1.0)
