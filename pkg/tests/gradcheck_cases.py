"""Finite-difference gradient checks for every differentiable layer.

Each case builds a random small instance from ``seed`` and returns the worst
relative error between autodiff and central differences over all inputs.
Scalar losses are ``sum(out * R)`` with a fixed random ``R`` so every output
element gets a distinct weight.
"""
from __future__ import annotations

import numpy as np

from hypersal import ops
from hypersal.ops import Conv3dKernel, DropoutSpec
from hypersal.tensor import Tape, Tensor, backward

from oracles import max_rel_error, numeric_grad


def _check(build, arrays):
    """``build(*tensors) -> scalar Tensor``; compares grads for each array."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build(*tensors)
    backward(loss, tape)
    worst = 0.0
    for t, a in zip(tensors, arrays):
        f = lambda: build(*[Tensor(x) for x in arrays]).item()  # noqa: E731
        worst = max(worst, max_rel_error(t.grad, numeric_grad(f, a)))
    return worst


def _projection(rng, shape):
    return Tensor(rng.normal(size=shape))


def conv3d_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 3), rng.integers(1, 3)
    h, w, b = rng.integers(3, 6), rng.integers(3, 6), rng.integers(4, 9)
    kh, kw, kb = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 4)
    x = rng.normal(size=(c_in, h, w, b))
    k = rng.normal(size=(c_out, c_in, kh, kw, kb))
    bias = rng.normal(size=(c_out,))
    r = _projection(rng, (c_out, h - kh + 1, w - kw + 1, b - kb + 1))
    return _check(lambda x, k, bias: (ops.conv3d(x, Conv3dKernel(k, bias)) * r).sum(), [x, k, bias])


def maxpool3d_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    c = rng.integers(1, 3)
    h, w, b = rng.integers(2, 6), rng.integers(2, 6), rng.integers(2, 9)
    n = c * h * w * b
    # distinct values at least 1/n apart, so a 1e-5 nudge never changes an argmax
    x = (rng.permutation(n) / n + rng.uniform(0, 0.1 / n, n)).reshape(c, h, w, b)
    r = _projection(rng, (c, h // 2, w // 2, b // 2))
    return _check(lambda x: (ops.maxpool3d(x) * r).sum(), [x])


def relu_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4, 5))
    x = np.where(np.abs(x) < 1e-2, 0.5, x)  # keep clear of the kink
    r = _projection(rng, x.shape)
    return _check(lambda x: (ops.relu(x) * r).sum(), [x])


def dense_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 13), rng.integers(1, 6)
    x = rng.normal(size=(n,))
    w = rng.normal(size=(m, n))
    b = rng.normal(size=(m,))
    r = _projection(rng, (m,))
    return _check(lambda x, w, b: (ops.dense(x, w, b) * r).sum(), [x, w, b])


def softmax_loss_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    batch = rng.integers(1, 6)
    logits = rng.normal(size=(batch, 2)) * 2
    labels = rng.integers(0, 2, size=batch)
    weights = [1.0, 6.26]
    return _check(
        lambda z: ops.weighted_cross_entropy(ops.softmax(z), labels, weights), [logits]
    )


def softmax_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    k = rng.integers(2, 6)
    z = rng.normal(size=(k,))
    r = _projection(rng, (k,))
    return _check(lambda z: (ops.softmax(z) * r).sum(), [z])


def dropout_case(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 5))
    r = _projection(rng, x.shape)
    spec = DropoutSpec(float(rng.choice([0.25, 0.5])), "train")
    # same generator seed on every call reproduces the mask
    return _check(
        lambda x: (ops.dropout(x, spec, np.random.default_rng(seed + 1000)) * r).sum(), [x]
    )


CASES = {
    "conv3d": conv3d_case,
    "maxpool3d": maxpool3d_case,
    "relu": relu_case,
    "dense": dense_case,
    "softmax": softmax_case,
    "softmax+weighted_cross_entropy": softmax_loss_case,
    "dropout": dropout_case,
}
