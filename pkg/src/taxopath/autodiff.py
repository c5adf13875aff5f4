"""Tape-based reverse-mode differentiation over dense rank<=2 tensors.

numpy supplies array storage and matmul; everything else (the tape, every
primitive's adjoint, gradient accumulation) lives here. Ops record onto
the active tape when one is open and run as plain numpy otherwise, so
inference pays no bookkeeping cost.

Batched sequence models keep per-position encoder states stacked
position-major: row t*batch + j holds example j at position t. The
attention helpers (tile_posmajor / posmajor_to_batch / attn_context)
assume that layout.
"""

from __future__ import annotations

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch

_ACTIVE_TAPE = None


class Tensor:
    """A dense array plus a gradient slot filled during backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Recorded primitives in execution order, replayed in reverse."""

    def __init__(self):
        self.nodes = []   # (output, inputs, backward_fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def clear(self):
        for out, inputs, _ in self.nodes:
            out.grad = None
            for t in inputs:
                t.grad = None
        self.nodes.clear()


def _record(out, inputs, backward_fn):
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.nodes.append((out, inputs, backward_fn))


def _accumulate(t: Tensor, g):
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _require(cond, msg):
    if not cond:
        raise ShapeMismatch(msg)


# --- arithmetic primitives ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2,
             f"matmul needs rank-2 operands, got {a.data.shape} and {b.data.shape}")
    _require(a.data.shape[1] == b.data.shape[0],
             f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)
    _record(out, (a, b), back)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add cannot broadcast {a.data.shape} with {b.data.shape}")
    out = Tensor(data)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))
    _record(out, (a, b), back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul cannot broadcast {a.data.shape} with {b.data.shape}")
    out = Tensor(data)

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))
    _record(out, (a, b), back)
    return out


def mul_const(a: Tensor, arr) -> Tensor:
    """Multiply by a non-differentiable array (masks, carry bits)."""
    arr = np.asarray(arr, dtype=a.data.dtype)
    out = Tensor(a.data * arr)

    def back(g):
        _accumulate(a, _unbroadcast(g * arr, a.data.shape))
    _record(out, (a,), back)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(c))

    def back(g):
        _accumulate(a, g * c)
    _record(out, (a,), back)
    return out


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    _require(a.data.ndim == b.data.ndim,
             f"concat rank mismatch: {a.data.shape} vs {b.data.shape}")
    try:
        data = np.concatenate([a.data, b.data], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat cannot join {a.data.shape} and {b.data.shape} on axis {axis}")
    out = Tensor(data)
    split = a.data.shape[axis]

    def back(g):
        ga, gb = np.split(g, [split], axis=axis)
        _accumulate(a, ga)
        _accumulate(b, gb)
    _record(out, (a, b), back)
    return out


def concat_rows(tensors) -> Tensor:
    """Stack rank-2 tensors along axis 0."""
    tensors = list(tensors)
    _require(len(tensors) > 0, "concat_rows needs at least one tensor")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
    counts = [t.data.shape[0] for t in tensors]

    def back(g):
        offset = 0
        for t, n in zip(tensors, counts):
            _accumulate(t, g[offset:offset + n])
            offset += n
    _record(out, tuple(tensors), back)
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def back(g):
        _accumulate(x, g * (1.0 - out.data * out.data))
    _record(out, (x,), back)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y)

    def back(g):
        _accumulate(x, g * out.data * (1.0 - out.data))
    _record(out, (x,), back)
    return out


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax; a rank-1 tensor is treated as one row."""
    d = x.data if x.data.ndim == 2 else x.data[None, :]
    z = d - d.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    if x.data.ndim == 1:
        y = y[0]
    out = Tensor(y)

    def back(g):
        if out.data.ndim == 1:
            dot = (g * out.data).sum()
            _accumulate(x, out.data * (g - dot))
        else:
            dot = (g * out.data).sum(axis=1, keepdims=True)
            _accumulate(x, out.data * (g - dot))
    _record(out, (x,), back)
    return out


def masked_softmax_rows(x: Tensor, mask) -> Tensor:
    """Softmax per row over positions where mask==1; masked weights are 0."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    _require(mask.shape == x.data.shape,
             f"mask shape {mask.shape} does not match scores {x.data.shape}")
    neg = np.where(mask > 0, x.data, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    # masked entries are zeroed before exp so stray scores cannot overflow
    z = np.where(mask > 0, x.data - m, 0.0)
    e = np.exp(z) * mask
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * out.data).sum(axis=1, keepdims=True)
        _accumulate(x, out.data * (g - dot))
    _record(out, (x,), back)
    return out


# --- indexing / layout primitives ---

def gather_rows(e: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    _require(e.data.ndim == 2, f"gather_rows needs a rank-2 table, got {e.data.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= e.data.shape[0]):
        raise IndexOutOfRange(f"row index out of range for table {e.data.shape}")
    out = Tensor(e.data[indices])

    def back(g):
        de = np.zeros_like(e.data)
        np.add.at(de, indices, g)
        _accumulate(e, de)
    _record(out, (e,), back)
    return out


def pick_row(e: Tensor, i: int) -> Tensor:
    """Row i of a table as a (1, d) tensor."""
    return gather_rows(e, np.asarray([i]))


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    _require(x.data.ndim == 2, f"slice_cols needs rank 2, got {x.data.shape}")
    _require(0 <= j0 <= j1 <= x.data.shape[1],
             f"bad column slice [{j0}:{j1}] for shape {x.data.shape}")
    out = Tensor(x.data[:, j0:j1])

    def back(g):
        dx = np.zeros_like(x.data)
        dx[:, j0:j1] = g
        _accumulate(x, dx)
    _record(out, (x,), back)
    return out


def tile_posmajor(q: Tensor, positions: int) -> Tensor:
    """(b, d) -> (positions*b, d): the whole block repeated per position."""
    b = q.data.shape[0]
    out = Tensor(np.tile(q.data, (positions, 1)))

    def back(g):
        _accumulate(q, g.reshape(positions, b, -1).sum(axis=0))
    _record(out, (q,), back)
    return out


def posmajor_to_batch(s: Tensor, batch: int, positions: int) -> Tensor:
    """(positions*batch, 1) column -> (batch, positions) score matrix."""
    _require(s.data.shape == (positions * batch, 1),
             f"expected shape {(positions * batch, 1)}, got {s.data.shape}")
    out = Tensor(np.ascontiguousarray(s.data.reshape(positions, batch).T))

    def back(g):
        _accumulate(s, np.ascontiguousarray(g.T).reshape(positions * batch, 1))
    _record(out, (s,), back)
    return out


def attn_context(w: Tensor, h_rows: Tensor, batch: int, positions: int) -> Tensor:
    """Weighted sum of encoder rows: (b, T) x (T*b, d) -> (b, d)."""
    _require(w.data.shape == (batch, positions),
             f"weights shape {w.data.shape} != {(batch, positions)}")
    _require(h_rows.data.shape[0] == positions * batch,
             f"encoder rows {h_rows.data.shape} do not cover {positions}x{batch}")
    h3 = h_rows.data.reshape(positions, batch, -1)
    out = Tensor(np.einsum("bt,tbd->bd", w.data, h3))

    def back(g):
        _accumulate(w, np.einsum("bd,tbd->bt", g, h3))
        dh = np.einsum("bt,bd->tbd", w.data, g)
        _accumulate(h_rows, dh.reshape(positions * batch, -1))
    _record(out, (w, h_rows), back)
    return out


# --- reductions / losses ---

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()))

    def back(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype))
    _record(out, (x,), back)
    return out


def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """-log softmax(logits)[target], stabilized by max subtraction."""
    d = logits.data.reshape(-1)
    k = d.shape[0]
    if not (0 <= int(target_index) < k):
        raise IndexOutOfRange(f"target {target_index} out of range for {k} classes")
    m = d.max()
    z = d - m
    lse = np.log(np.exp(z).sum())
    out = Tensor(np.asarray(lse - z[int(target_index)]))

    def back(g):
        p = np.exp(z - lse)
        p[int(target_index)] -= 1.0
        _accumulate(logits, (g * p).reshape(logits.data.shape))
    _record(out, (logits,), back)
    return out


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Per-row -log softmax(logits)[target] as a (b, 1) column."""
    targets = np.asarray(targets, dtype=np.int64)
    b, k = logits.data.shape
    _require(targets.shape == (b,), f"targets shape {targets.shape} != ({b},)")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise IndexOutOfRange(f"target index out of range for {k} classes")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    out = Tensor(lse - z[rows, targets][:, None])

    def back(g):
        p = np.exp(z - lse)
        p[rows, targets] -= 1.0
        _accumulate(logits, g * p)
    _record(out, (logits,), back)
    return out


def backward(loss: Tensor, tape: Tape, store) -> dict:
    """Reverse the tape once; gradients for every parameter in `store`.

    Parameters that did not contribute to the loss get zeros. All grads
    recorded on the tape are cleared before returning.
    """
    _require(loss.data.size == 1, f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, _, back in reversed(tape.nodes):
        if out.grad is not None:
            back(out.grad)
    grads = {}
    for name, param in store.items():
        g = param.grad
        grads[name] = np.zeros_like(param.data) if g is None else np.array(g, copy=True)
    tape.clear()
    return grads
