"""The two-conv, two-dense 3-D CNN and its checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import ops
from .ops import Conv3dKernel, DropoutSpec
from .tensor import Tensor

CONV_KERNEL = (3, 3, 16)
CONV1_FILTERS = 2
CONV2_FILTERS = 4
HIDDEN_UNITS = 16
NUM_CLASSES = 2
DROPOUT_AFTER_POOL = 0.25
DROPOUT_AFTER_DENSE = 0.5
FULL_INPUT_SHAPE = (1, 64, 64, 240)

CHECKPOINT_MAGIC = b"HSM1"

LAYER_NAMES = ("conv1", "pool1", "conv2", "pool2", "flatten", "dense1", "dense2")


class CheckpointError(ValueError):
    pass


def _conv_shape(shape, filters, name):
    c, *extents = shape
    out = []
    for axis, size, k in zip("HWB", extents, CONV_KERNEL):
        if size < k:
            raise ValueError(
                f"layer {name}: extent {size} on axis {axis} is smaller than kernel extent {k}"
            )
        out.append(size - k + 1)
    return (filters, *out)


def _pool_shape(shape, name):
    c, *extents = shape
    for axis, size in zip("HWB", extents):
        if size < 2:
            raise ValueError(f"layer {name}: pooling needs extent >= 2 on axis {axis}, got {size}")
    return (c, *(s // 2 for s in extents))


def infer_shapes(input_shape) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape of each layer for a ``[1, H, W, B]`` input.

    >>> [s for _, s in infer_shapes((1, 16, 16, 64))][-4:]
    [(4, 2, 2, 4), (64,), (16,), (2,)]
    """
    input_shape = tuple(int(s) for s in input_shape)
    if len(input_shape) != 4 or input_shape[0] != 1:
        raise ValueError(f"input shape must be [1, H, W, B], got {list(input_shape)}")
    chain = []
    s = _conv_shape(input_shape, CONV1_FILTERS, "conv1")
    chain.append(("conv1", s))
    s = _pool_shape(s, "pool1")
    chain.append(("pool1", s))
    s = _conv_shape(s, CONV2_FILTERS, "conv2")
    chain.append(("conv2", s))
    s = _pool_shape(s, "pool2")
    chain.append(("pool2", s))
    chain.append(("flatten", (int(np.prod(s)),)))
    chain.append(("dense1", (HIDDEN_UNITS,)))
    chain.append(("dense2", (NUM_CLASSES,)))
    return chain


def flatten_dim(input_shape) -> int:
    return infer_shapes(input_shape)[4][1][0]


@dataclass
class ModelParams:
    input_shape: tuple[int, int, int, int]
    conv1: Conv3dKernel
    conv2: Conv3dKernel
    dense1_w: Tensor
    dense1_b: Tensor
    dense2_w: Tensor
    dense2_b: Tensor

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield "conv1.weights", self.conv1.weights
        yield "conv1.bias", self.conv1.bias
        yield "conv2.weights", self.conv2.weights
        yield "conv2.bias", self.conv2.bias
        yield "dense1.weights", self.dense1_w
        yield "dense1.bias", self.dense1_b
        yield "dense2.weights", self.dense2_w
        yield "dense2.bias", self.dense2_b

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def copy(self) -> ModelParams:
        return params_from_arrays(self.input_shape, {k: t.data.copy() for k, t in self.named_tensors()})


def expected_param_shapes(input_shape) -> dict[str, tuple[int, ...]]:
    fd = flatten_dim(input_shape)
    return {
        "conv1.weights": (CONV1_FILTERS, 1, *CONV_KERNEL),
        "conv1.bias": (CONV1_FILTERS,),
        "conv2.weights": (CONV2_FILTERS, CONV1_FILTERS, *CONV_KERNEL),
        "conv2.bias": (CONV2_FILTERS,),
        "dense1.weights": (HIDDEN_UNITS, fd),
        "dense1.bias": (HIDDEN_UNITS,),
        "dense2.weights": (NUM_CLASSES, HIDDEN_UNITS),
        "dense2.bias": (NUM_CLASSES,),
    }


def params_from_arrays(input_shape, arrays: dict[str, np.ndarray]) -> ModelParams:
    input_shape = tuple(int(s) for s in input_shape)
    shapes = expected_param_shapes(input_shape)
    missing = set(shapes) - set(arrays)
    if missing:
        raise ValueError(f"missing parameters: {sorted(missing)}")
    t = {}
    for name, shape in shapes.items():
        a = np.asarray(arrays[name], dtype=np.float64)
        if a.shape != shape:
            raise ValueError(f"parameter {name} has shape {list(a.shape)}, expected {list(shape)}")
        t[name] = Tensor(a, requires_grad=True, name=name)
    return ModelParams(
        input_shape,
        Conv3dKernel(t["conv1.weights"], t["conv1.bias"]),
        Conv3dKernel(t["conv2.weights"], t["conv2.bias"]),
        t["dense1.weights"],
        t["dense1.bias"],
        t["dense2.weights"],
        t["dense2.bias"],
    )


def init_params(input_shape=FULL_INPUT_SHAPE, rng: np.random.Generator | int | None = 0) -> ModelParams:
    """Conv kernels ~ N(0, 0.05^2), dense layers Glorot-uniform, all biases zero."""
    rng = np.random.default_rng(rng)
    shapes = expected_param_shapes(input_shape)
    fd = shapes["dense1.weights"][1]
    arrays = {
        "conv1.weights": ops.init_conv_normal(shapes["conv1.weights"], rng).data,
        "conv1.bias": np.zeros(shapes["conv1.bias"]),
        "conv2.weights": ops.init_conv_normal(shapes["conv2.weights"], rng).data,
        "conv2.bias": np.zeros(shapes["conv2.bias"]),
        "dense1.weights": ops.init_glorot_uniform(fd, HIDDEN_UNITS, rng).data,
        "dense1.bias": np.zeros(HIDDEN_UNITS),
        "dense2.weights": ops.init_glorot_uniform(HIDDEN_UNITS, NUM_CLASSES, rng).data,
        "dense2.bias": np.zeros(NUM_CLASSES),
    }
    return params_from_arrays(input_shape, arrays)


def zero_params(input_shape) -> ModelParams:
    return params_from_arrays(
        input_shape, {k: np.zeros(s) for k, s in expected_param_shapes(input_shape).items()}
    )


def count_params(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors())


def forward(
    params: ModelParams,
    patch: Tensor,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the network on one ``[1,H,W,B]`` patch or an ``[N,1,H,W,B]`` batch.

    Returns ``(logits, probabilities)``. Dropout is active only when
    ``mode == "train"``, in which case ``rng`` drives the masks. If ``trace``
    is a list, ``(layer_name, activation)`` pairs are appended to it.
    """
    batched = patch.ndim == 5
    sample_shape = patch.shape[1:] if batched else patch.shape
    if tuple(sample_shape) != tuple(params.input_shape):
        raise ValueError(
            f"patch shape {list(sample_shape)} does not match model input {list(params.input_shape)}"
        )
    if mode == "train" and rng is None:
        raise ValueError("train mode needs a random generator for dropout")

    def log(name, t):
        if trace is not None:
            trace.append((name, t))
        return t

    x = log("conv1", ops.conv3d(patch, params.conv1))
    x = ops.relu(x)
    x = log("pool1", ops.maxpool3d(x))
    x = ops.dropout(x, DropoutSpec(DROPOUT_AFTER_POOL, mode), rng)
    x = log("conv2", ops.conv3d(x, params.conv2))
    x = ops.relu(x)
    x = log("pool2", ops.maxpool3d(x))
    x = log("flatten", ops.flatten(x, batched=batched))
    x = log("dense1", ops.dense(x, params.dense1_w, params.dense1_b))
    x = ops.relu(x)
    x = ops.dropout(x, DropoutSpec(DROPOUT_AFTER_DENSE, mode), rng)
    logits = log("dense2", ops.dense(x, params.dense2_w, params.dense2_b))
    return logits, ops.softmax(logits)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write ``HSM1`` + u32 manifest length + JSON manifest + float32 LE buffers."""
    entries, buffers, offset = [], [], 0
    for name, t in params.named_tensors():
        buf = t.data.astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        buffers.append(buf)
        offset += len(buf)
    manifest = json.dumps(
        {"input_shape": list(params.input_shape), "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for buf in buffers:
            f.write(buf)


def load_checkpoint(path, input_shape=None) -> ModelParams:
    """Read a checkpoint, checking every tensor against the configured input shape."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<I", raw, 4)
    try:
        manifest = json.loads(raw[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    stored_shape = tuple(manifest["input_shape"])
    if input_shape is not None and tuple(input_shape) != stored_shape:
        raise CheckpointError(
            f"{path}: checkpoint built for input {list(stored_shape)}, "
            f"configured input is {list(input_shape)}"
        )
    base = 8 + mlen
    arrays = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"]))
        start = base + e["offset"]
        if start + 4 * n > len(raw):
            raise CheckpointError(f"{path}: buffer for {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f4", count=n, offset=start).reshape(e["shape"])
    try:
        return params_from_arrays(stored_shape, arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
