"""Network layers with forward and backward rules.

Volume ops take ``[C, H, W, B]`` for one sample or ``[N, C, H, W, B]`` for a
batch; the band axis is innermost. Reductions accumulate in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, record

HEALTHY, INFECTED = 0, 1
LOG_CLAMP = 1e-7


@dataclass
class Conv3dKernel:
    weights: Tensor  # [out_channels, in_channels, kh, kw, kb]
    bias: Tensor  # [out_channels]

    def __post_init__(self):
        if self.weights.ndim != 5:
            raise ValueError(f"kernel weights must be 5-d, got shape {list(self.weights.shape)}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {list(self.bias.shape)} does not match "
                f"{self.weights.shape[0]} output channels"
            )

    @property
    def extent(self) -> tuple[int, int, int]:
        return tuple(self.weights.shape[2:])


@dataclass(frozen=True)
class DropoutSpec:
    rate: float
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")


def _batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 4:
        return x.data[None], True
    if x.ndim == 5:
        return x.data, False
    raise ValueError(f"{op} expects [C,H,W,B] or [N,C,H,W,B], got shape {list(x.shape)}")


def conv3d(x: Tensor, kernel: Conv3dKernel) -> Tensor:
    """Valid, stride-1 3-D convolution (cross-correlation, as in most frameworks).

    Accumulates one kernel offset at a time, which keeps memory at the size of
    the output rather than of an unfolded im2col matrix.
    """
    xd, single = _batched(x, "conv3d")
    w, b = kernel.weights, kernel.bias
    n, c_in, h, wd, nb = xd.shape
    c_out, wc, kh, kw, kb = w.shape
    if wc != c_in:
        raise ValueError(f"kernel expects {wc} input channels, input has {c_in}")
    for axis, size, k in (("H", h, kh), ("W", wd, kw), ("B", nb, kb)):
        if k > size:
            raise ValueError(f"kernel extent {k} exceeds input extent {size} on axis {axis}")
    ho, wo, bo = h - kh + 1, wd - kw + 1, nb - kb + 1

    x64 = xd.astype(np.float64, copy=False)
    w64 = w.data.astype(np.float64, copy=False)
    out = np.zeros((n, ho, wo, bo, c_out), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            for k in range(kb):
                win = x64[:, :, i : i + ho, j : j + wo, k : k + bo]
                # [n,c,ho,wo,bo] . [c,o] -> [n,ho,wo,bo,o]
                out += np.tensordot(win, w64[:, :, i, j, k].T, axes=([1], [0]))
    out = np.moveaxis(out, -1, 1) + b.data.astype(np.float64)[None, :, None, None, None]
    out = out.astype(x.data.dtype, copy=False)

    def back(g):
        g = g[None] if single else g
        g64 = g.astype(np.float64, copy=False)
        gx = np.zeros_like(x64) if x.requires_grad else None
        gw = np.zeros(w.shape, dtype=np.float64) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                for k in range(kb):
                    sl = (slice(None), slice(None), slice(i, i + ho), slice(j, j + wo), slice(k, k + bo))
                    if gw is not None:
                        gw[:, :, i, j, k] = np.tensordot(
                            g64, x64[sl], axes=([0, 2, 3, 4], [0, 2, 3, 4])
                        )
                    if gx is not None:
                        # [n,o,ho,wo,bo] . [o,c] -> [n,ho,wo,bo,c]
                        contrib = np.tensordot(g64, w64[:, :, i, j, k], axes=([1], [0]))
                        gx[sl] += np.moveaxis(contrib, -1, 1)
        gb = g64.sum(axis=(0, 2, 3, 4)) if b.requires_grad else None
        if gx is not None and single:
            gx = gx[0]
        return gx, gw, gb

    return record(out[0] if single else out, (x, w, b), back, "conv3d")


def maxpool3d(x: Tensor) -> Tensor:
    """Disjoint 2x2x2 max pooling; trailing odd planes are dropped."""
    xd, single = _batched(x, "maxpool3d")
    n, c, h, w, nb = xd.shape
    for axis, size in (("H", h), ("W", w), ("B", nb)):
        if size < 2:
            raise ValueError(f"maxpool3d needs extent >= 2 on axis {axis}, got {size}")
    h2, w2, b2 = h // 2, w // 2, nb // 2
    crop = xd[:, :, : 2 * h2, : 2 * w2, : 2 * b2]
    # window elements last, in (dy, dx, db) scan order
    blocks = crop.reshape(n, c, h2, 2, w2, 2, b2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    blocks = blocks.reshape(n, c, h2, w2, b2, 8)
    arg = blocks.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        g = g[None] if single else g
        gb = np.zeros((n, c, h2, w2, b2, 8), dtype=np.float64)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h2, w2, b2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        gx = np.zeros(xd.shape, dtype=np.float64)
        gx[:, :, : 2 * h2, : 2 * w2, : 2 * b2] = gb.reshape(n, c, 2 * h2, 2 * w2, 2 * b2)
        return (gx[0] if single else gx,)

    return record(out[0] if single else out, (x,), back, "maxpool3d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return record(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), back, "relu")


def dropout(x: Tensor, spec: DropoutSpec, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""
    if spec.mode == "eval" or spec.rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= spec.rate
    scale = np.where(keep, 1.0 / (1.0 - spec.rate), 0.0)
    return _apply_mask(x, scale)


def _apply_mask(x: Tensor, scale: np.ndarray) -> Tensor:
    def back(g):
        return (g * scale,)

    return record((x.data * scale).astype(x.data.dtype), (x,), back, "dropout")


def flatten(x: Tensor, batched: bool = False) -> Tensor:
    shape = (x.shape[0], -1) if batched else (-1,)
    data = x.data.reshape(shape)

    def back(g):
        return (g.reshape(x.shape),)

    return record(data, (x,), back, "flatten")


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``weights @ x + bias`` for ``x`` of shape ``[n]`` or ``[batch, n]``."""
    if weights.ndim != 2 or bias.shape != (weights.shape[0],):
        raise ValueError(
            f"dense weights {list(weights.shape)} and bias {list(bias.shape)} do not conform"
        )
    if x.shape[-1] != weights.shape[1] or x.ndim not in (1, 2):
        raise ValueError(f"dense input {list(x.shape)} does not match weights {list(weights.shape)}")
    x64 = x.data.astype(np.float64, copy=False)
    w64 = weights.data.astype(np.float64, copy=False)
    out = (x64 @ w64.T + bias.data).astype(x.data.dtype, copy=False)

    def back(g):
        gx = g @ w64
        g2 = np.atleast_2d(g)
        gw = g2.T @ np.atleast_2d(x64)
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return record(out, (x, weights, bias), back, "dense")


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max."""
    if logits.shape[-1] < 2:
        raise ValueError("softmax needs at least two classes")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return record(s, (logits,), back, "softmax")


def _nll_terms(probs: Tensor, labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError(f"probabilities must be a non-empty [batch, classes] array, got {list(probs.shape)}")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"{labels.size} labels for a batch of {probs.shape[0]}")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"labels must lie in [0, {probs.shape[1] - 1}]")
    rows = np.arange(labels.size)
    p = probs.data[rows, labels].astype(np.float64)
    clipped = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    return rows, labels, clipped


def _nll_loss(probs: Tensor, labels, per_class: np.ndarray | None, op: str) -> Tensor:
    rows, labels, p = _nll_terms(probs, labels)
    w = np.ones(labels.size) if per_class is None else per_class[labels]
    batch = labels.size
    loss = np.array((w * -np.log(p)).sum() / batch)
    inside = (p > LOG_CLAMP) & (p < 1.0 - LOG_CLAMP)

    def back(g):
        gp = np.zeros(probs.shape, dtype=np.float64)
        gp[rows, labels] = np.where(inside, -w / (p * batch), 0.0) * float(g)
        return (gp,)

    return record(loss, (probs,), back, op)


def weighted_cross_entropy(
    probs: Tensor, labels: Sequence[int], class_weights: Sequence[float]
) -> Tensor:
    """Mean of ``w[label] * -log p[label]`` over the batch, p clamped to [1e-7, 1-1e-7]."""
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (probs.shape[-1],):
        raise ValueError(f"need one weight per class, got {w.size}")
    return _nll_loss(probs, labels, w, "weighted_cross_entropy")


def cross_entropy(probs: Tensor, labels: Sequence[int]) -> Tensor:
    return _nll_loss(probs, labels, None, "cross_entropy")


def init_conv_normal(shape: Sequence[int], rng: np.random.Generator, stddev: float = 0.05) -> Tensor:
    return Tensor(rng.normal(0.0, stddev, size=tuple(shape)), requires_grad=True)


def init_glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
    """Weights of shape ``[fan_out, fan_in]`` drawn from U(-a, a), a = sqrt(6/(fan_in+fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True)


def init_zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True)
