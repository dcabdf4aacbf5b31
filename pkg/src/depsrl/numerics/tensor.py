"""Dense float64 tensors with a recording tape for reverse-mode differentiation."""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from depsrl.errors import NumericError, ShapeError

_ACTIVE_TAPES: List["Tape"] = []


class Tape:
    """Ordered record of executed operations.

    Operations executed while a tape is active append their output node.
    Since a node is only recorded after all of its inputs exist, replaying
    the record backwards is a valid reverse topological order.

    >>> with Tape() as tape:
    ...     y = some_op(x)
    >>> backward(y)
    """

    def __init__(self):
        self.nodes: List[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_backward", "_tape", "_index")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._tape: Optional[Tape] = None
        self._index = -1

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar over the functional ops
    def __add__(self, other):
        from depsrl.numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from depsrl.numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from depsrl.numerics import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from depsrl.numerics import ops

        return ops.index(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording it on the active tape when gradients flow."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        tape = active_tape()
        if tape is not None:
            out.requires_grad = True
            out._backward = backward_fn
            out._tape = tape
            out._index = len(tape.nodes)
            tape.nodes.append(out)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    grad = unbroadcast(grad, t.data.shape)
    t.grad = grad if t.grad is None else t.grad + grad


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            return
        raise NumericError("loss was not produced under an active Tape")
    tape = loss._tape
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes[: loss._index + 1]):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
