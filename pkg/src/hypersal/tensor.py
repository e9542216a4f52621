"""Dense tensors with reverse-mode differentiation over a recorded tape.

A :class:`Tape` is activated with a ``with`` block. While it is active, every
operation whose inputs include a tensor with ``requires_grad=True`` appends a
node to it. :func:`backward` then walks the nodes once, newest first.

    >>> x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> backward(loss, tape)
    >>> x.grad
    array([2., 4., 6.])
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = ["Tensor", "Tape", "Node", "tensor_from", "backward", "active_tape", "record"]

_local = threading.local()


class Tensor:
    """An n-d array of reals, optionally tracked for gradients.

    ``data`` is a C-contiguous (row-major) ndarray, so the innermost axis
    varies fastest in memory.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        elif not data.flags.c_contiguous:
            data = data.copy(order="C")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"tensor of shape {list(self.shape)} is not a single element")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(np.array(-1.0)))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def sum(self) -> Tensor:
        return tsum(self)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __getitem__(self, index) -> Tensor:
        return take(self, index)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def tensor_from(shape: Sequence[int], values: Sequence[float], dtype=np.float64) -> Tensor:
    """Build a tensor from an extent list and flat row-major values."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"extents must be positive, got {list(shape)}")
    values = np.asarray(values, dtype=dtype).reshape(-1)
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ValueError(
            f"shape {list(shape)} holds {expected} values but {values.size} were given"
        )
    return Tensor(values.reshape(shape))


@dataclass(eq=False)
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    # maps the output gradient to one gradient (or None) per input
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str = ""
    tape: Tape | None = field(default=None, repr=False)


class Tape:
    """Ordered record of differentiable operations.

    One tape belongs to one thread. Tapes nest; the innermost active one
    receives new nodes.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, t: Tensor) -> bool:
        return t.tape_node is not None and t.tape_node.tape is self


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str = "") -> Tensor:
    """Wrap an op result, adding a tape node when any input needs gradients."""
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(tuple(inputs), out, backward_fn, op, tape)
        tape.nodes.append(node)
        out.tape_node = node
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor.

    Gradients add onto whatever ``grad`` already holds, so two calls without
    zeroing in between double them.
    """
    if loss.size != 1:
        raise ValueError(f"loss must hold a single element, got shape {list(loss.shape)}")
    if loss not in tape:
        raise ValueError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data, dtype=np.float64)}
    touched: dict[int, Tensor] = {id(loss): loss}
    end = tape.nodes.index(loss.tape_node)
    for node in reversed(tape.nodes[: end + 1]):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        for inp, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.asarray(g, dtype=np.float64).reshape(inp.shape)
                touched[key] = inp

    for key, t in touched.items():
        g = grads[key].astype(t.data.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


# Elementary ops used by composite graphs and the model glue.


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), back, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), back, "mul")


def tsum(a: Tensor) -> Tensor:
    def back(g):
        return (np.broadcast_to(g.reshape(()), a.shape).copy(),)

    return record(np.array(a.data.sum(dtype=np.float64)), (a,), back, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    def back(g):
        return (g.reshape(a.shape),)

    return record(a.data.reshape(shape), (a,), back, "reshape")


def take(a: Tensor, index) -> Tensor:
    def back(g):
        full = np.zeros(a.shape, dtype=np.float64)
        full[index] += g
        return (full,)

    return record(np.array(a.data[index]), (a,), back, "take")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g
