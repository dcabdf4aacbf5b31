"""Differentiable operations over :class:`Tensor`.

Each op computes its value eagerly with numpy and, when a tape is active and
some input requires gradients, records a closure that pushes the output
gradient back to its inputs.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from depsrl.errors import ShapeError
from depsrl.numerics.tensor import Tensor, accumulate, as_tensor, make_node


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def _backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make_node(a.data + b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def _backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make_node(a.data * b.data, (a, b), _backward)


def scale(a: Tensor, c: float) -> Tensor:
    def _backward(g):
        accumulate(a, g * c)

    return make_node(a.data * c, (a,), _backward)


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy semantics, including batched and 1-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def _backward(g):
        ad, bd = a.data, b.data
        if bd.ndim == 1:
            # out[..., i] = sum_k a[..., i, k] b[k]
            accumulate(a, g[..., None] * bd)
            if b.requires_grad:
                accumulate(b, (ad * g[..., None]).reshape(-1, bd.shape[0]).sum(axis=0))
            return
        if ad.ndim == 1:
            if a.requires_grad:
                accumulate(a, (bd * g[..., None, :]).sum(axis=-1).reshape(-1, ad.shape[0]).sum(axis=0))
            accumulate(b, ad[:, None] * g[..., None, :])
            return
        if a.requires_grad:
            accumulate(a, np.matmul(g, np.swapaxes(bd, -1, -2)))
        if b.requires_grad:
            accumulate(b, np.matmul(np.swapaxes(ad, -1, -2), g))

    return make_node(out, (a, b), _backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""

    def _backward(g):
        accumulate(a, np.swapaxes(g, -1, -2))

    return make_node(np.swapaxes(a.data, -1, -2), (a,), _backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def _backward(g):
        accumulate(a, g.reshape(a.shape))

    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return make_node(out, (a,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            accumulate(t, piece)

    return make_node(out, tensors, _backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: incompatible shapes {' and '.join(map(str, shapes))}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def _backward(g):
        for i, t in enumerate(tensors):
            accumulate(t, np.take(g, i, axis=axis))

    return make_node(out, tensors, _backward)


def index(a: Tensor, idx) -> Tensor:
    """Basic or advanced numpy indexing; repeated indices accumulate."""
    out = a.data[idx]
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis for k in parts)

    def _backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        accumulate(a, full)

    return make_node(np.array(out, dtype=np.float64), (a,), _backward)


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def _backward(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.shape))
        else:
            accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return make_node(np.asarray(out), (a,), _backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def _backward(g):
        accumulate(a, g * (1.0 - y * y))

    return make_node(y, (a,), _backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def _backward(g):
        accumulate(a, g * y * (1.0 - y))

    return make_node(y, (a,), _backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {table.shape[0]}) for table {table.shape}")

    def _backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        accumulate(table, full)

    return make_node(table.data[ids], (table,), _backward)


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool = True) -> Tensor:
    """Inverted dropout: kept entries are scaled by ``1 / (1 - rate)``."""
    if not train or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ShapeError(f"dropout: rate must be < 1, got {rate}")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def _backward(g):
        accumulate(a, g * mask)

    return make_node(a.data * mask, (a,), _backward)


def averaging_matrix(sets, n_positions: int) -> np.ndarray:
    """Row-stochastic matrix whose row ``u`` averages the positions in ``sets[u]``.

    ``sets`` is a list of position lists, or a list of such lists for a batch.
    """
    if sets and sets[0] and isinstance(sets[0][0], (list, tuple, range)):
        return np.stack([averaging_matrix(s, n_positions) for s in sets])
    m = np.zeros((len(sets), n_positions))
    for u, members in enumerate(sets):
        members = list(members)
        if not members:
            raise ShapeError(f"mean_over_sets: unit {u} has no member positions")
        for p in members:
            if not 0 <= p < n_positions:
                raise ShapeError(f"mean_over_sets: position {p} outside [0, {n_positions})")
            m[u, p] += 1.0 / len(members)
    return m


def mean_over_sets(x: Tensor, sets) -> Tensor:
    """Average rows of ``x`` (positions x width) within each member set.

    For a batched ``x`` of shape (B, T, w), ``sets`` holds one set list per
    batch row and all lists must have the same length.
    """
    avg = sets if isinstance(sets, np.ndarray) else averaging_matrix(sets, x.shape[-2])
    if avg.shape[-1] != x.shape[-2]:
        raise ShapeError(f"mean_over_sets: averaging map {avg.shape} vs input {x.shape}")

    def _backward(g):
        accumulate(x, np.matmul(np.swapaxes(avg, -1, -2), g))

    return make_node(np.matmul(avg, x.data), (x,), _backward)


def log_softmax(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Log-softmax over the last axis; ``mask`` False entries become -inf."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ShapeError("log_softmax: a row has every entry masked")
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def _backward(g):
        g = np.where(np.isfinite(y), g, 0.0)
        accumulate(a, g - p * g.sum(axis=-1, keepdims=True))

    return make_node(y, (a,), _backward)


def lstm_cell(x: Tensor, state: Tensor, weight: Tensor, bias: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """One LSTM step on a batch.

    ``state`` packs ``[h, c]`` along the last axis (shape B x 2H); the result
    uses the same packing. ``weight`` is (in + H) x 4H with gate blocks
    ordered input, forget, candidate, output. Rows where ``mask`` is 0 carry
    their state through unchanged, which lets padded sequences share a batch.
    """
    hidden = state.shape[-1] // 2
    n_in = x.shape[-1]
    if weight.shape != (n_in + hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ShapeError(
            f"lstm_cell: weight {weight.shape} / bias {bias.shape} do not fit input {x.shape} and state {state.shape}"
        )
    h_prev, c_prev = state.data[:, :hidden], state.data[:, hidden:]
    xh = np.concatenate([x.data, h_prev], axis=1)
    z = xh @ weight.data + bias.data
    gates = _sigmoid(z)
    i, f, o = gates[:, :hidden], gates[:, hidden : 2 * hidden], gates[:, 3 * hidden :]
    cand = np.tanh(z[:, 2 * hidden : 3 * hidden])
    c = f * c_prev + i * cand
    tc = np.tanh(c)
    h = o * tc
    m = np.ones((x.shape[0], 1)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    h_out = m * h + (1.0 - m) * h_prev
    c_out = m * c + (1.0 - m) * c_prev

    def _backward(g):
        gh, gc = g[:, :hidden], g[:, hidden:]
        gh_live, gc_live = gh * m, gc * m
        do = gh_live * tc
        dc = gc_live + gh_live * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * cand * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - cand * cand),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        accumulate(weight, xh.T @ dz)
        accumulate(bias, dz.sum(axis=0))
        dxh = dz @ weight.data.T
        accumulate(x, dxh[:, :n_in])
        if state.requires_grad:
            dh_prev = dxh[:, n_in:] + gh * (1.0 - m)
            dc_prev = dc * f + gc * (1.0 - m)
            accumulate(state, np.concatenate([dh_prev, dc_prev], axis=1))

    return make_node(np.concatenate([h_out, c_out], axis=1), (x, state, weight, bias), _backward)
