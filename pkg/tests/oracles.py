"""Independent reference implementations used as test oracles.

Nothing here imports the package's numeric code: every oracle is written
from the defining formulas with plain Python floats or numpy, so agreement
is evidence rather than tautology.
"""

import math

import numpy as np


def scalar_fedavg_walkthrough(w0=0.5, client_lr=0.1, server_lr=0.01, rounds=100, x=1.0, y=1.0):
    """One client holding one example; B=1, E=1. Returns w after each round."""
    w, history = w0, []
    for _ in range(rounds):
        local = w
        grad = 2.0 * (local * x - y) * x
        local = local - client_lr * grad
        delta = w - local
        w = w - server_lr * (1.0 * delta) / 1.0
        history.append(w)
    return history


def adagrad_scalar(gs, lr, eps=1e-3, p=0.0):
    acc, out = 0.0, []
    for g in gs:
        acc = acc + g * g
        p = p - lr * g / (math.sqrt(acc) + eps)
        out.append(p)
    return out


def adam_scalar(gs, lr, b1=0.9, b2=0.999, eps=1e-8, p=0.0):
    m = v = 0.0
    out = []
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


def yogi_scalar(gs, lr, b1=0.9, b2=0.999, eps=1e-3, p=0.0):
    m = v = 0.0
    out = []
    for g in gs:
        m = b1 * m + (1 - b1) * g
        g2 = g * g
        sign = (v > g2) - (v < g2)
        v = v - (1 - b2) * sign * g2
        p = p - lr * m / (math.sqrt(v) + eps)
        out.append(p)
    return out


def central_difference(f, params, eps=1e-5):
    """Numerical gradient of scalar ``f`` over a dict-of-arrays (possibly nested)."""
    flat = _flatten(params)
    grads = {}
    for path, arr in flat.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = {k: v.copy() for k, v in flat.items()}
            minus = {k: v.copy() for k, v in flat.items()}
            plus[path][idx] += eps
            minus[path][idx] -= eps
            g[idx] = (f(_unflatten(plus)) - f(_unflatten(minus))) / (2 * eps)
        grads[path] = g
    return grads


def _flatten(tree, prefix=""):
    if isinstance(tree, dict):
        out = {}
        for k, v in tree.items():
            out.update(_flatten(v, f"{prefix}/{k}" if prefix else k))
        return out
    return {prefix: np.array(tree, dtype=np.float64)}


def _unflatten(flat):
    root = {}
    for path, v in flat.items():
        node = root
        parts = path.split("/")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return root


def flatten(tree):
    return _flatten(tree)


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def per_example_metric_oracle(predict_one, xs, ys, metric):
    """Plain loop: average ``metric(prediction, target)`` over examples."""
    values = [metric(predict_one(x), y) for x, y in zip(xs, ys)]
    return sum(values) / len(values)


def sq_err(pred, y):
    return (float(pred) - float(y)) ** 2


def ce_loss(logits, y):
    z = [float(v) for v in logits]
    top = max(z)
    return top - z[int(y)] + math.log(sum(math.exp(v - top) for v in z))


def correct(logits, y):
    return 1.0 if int(np.argmax(logits)) == int(y) else 0.0


def stochastic_quantize_mean(value, low, high, levels, draws, gen):
    """Monte Carlo mean of the unbiased rounding of one value."""
    step = (high - low) / (levels - 1)
    pos = (value - low) / step
    lo = math.floor(pos)
    p_up = pos - lo
    ups = gen.random(draws) < p_up
    return float(np.mean(low + (lo + ups) * step))
