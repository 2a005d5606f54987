"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Define-by-run: every operation records its inputs and a backward closure on
the output tensor; ``Tensor.backward()`` walks the recorded graph once in
reverse topological order. The graph is rebuilt on every forward pass.

Broadcasting is deliberately restricted to the two patterns the model needs
(``matrix + row-bias`` and ``matrix * row-vector``); everything else requires
exact shape agreement and raises :class:`ShapeError` otherwise.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf

_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float64 or float32)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}; use float64 or float32")
    _default_dtype = dtype.type


def default_dtype():
    return _default_dtype


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """Non-finite input where finite values are required."""


class Tensor:
    """Dense n-dimensional array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this tensor, seeding with ones.

        For a scalar this is the usual gradient; for a non-scalar output it
        yields the gradient of ``sum(output)``. Each graph node is visited
        exactly once, so accumulation order is deterministic.
        """
        order = _topo_order(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _topo_order(root: Tensor):
    """Post-order over the graph (parents before children), iterative."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad for t in tensors)


def _result(data, parents, backward) -> Tensor:
    if _needs_grad(*parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# structural / arithmetic ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product. Backward: dA = g Bᵀ, dB = Aᵀ g."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _result(out_data, (a, b), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over matching leading dimensions."""
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b.accumulate_grad(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(out_data, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + 1·bᵀ``: add a vector bias along the last dimension."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match input {x.shape}")
    out_data = x.data + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(out_data, (x, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _result(out_data, (a, b), backward)


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """``x ⊙ (1·vᵀ)``: scale the last dimension by a vector, broadcast over rows."""
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeError(f"mul_rowvec: vector {v.shape} does not match input {x.shape}")
    out_data = x.data * v.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * v.data)
        if v.requires_grad:
            v.accumulate_grad((g * x.data).reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(out_data, (x, v), backward)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = x.data * s

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * s)

    return _result(out_data, (x,), backward)


def add_const(x: Tensor, c) -> Tensor:
    """Add a non-learnable constant (e.g. an attention mask); broadcastable."""
    c = np.asarray(c)
    out_data = x.data + c
    if out_data.shape != x.shape:
        raise ShapeError(f"add_const: constant {c.shape} broadcast changes shape {x.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)

    return _result(out_data, (x,), backward)


def mul_const(x: Tensor, c) -> Tensor:
    """Multiply by a non-learnable constant of the same shape (or scalar)."""
    c = np.asarray(c)
    out_data = x.data * c
    if out_data.shape != x.shape:
        raise ShapeError(f"mul_const: constant {c.shape} broadcast changes shape {x.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * c)

    return _result(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return _result(out_data, (x,), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two dimensions."""
    if x.ndim < 2:
        raise ShapeError(f"transpose: need >= 2 dims, got shape {x.shape}")
    out_data = np.swapaxes(x.data, -1, -2)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.swapaxes(g, -1, -2))

    return _result(out_data, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return _result(out_data, (x,), backward)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(T, d) -> (n_heads, T, d // n_heads)."""
    if x.ndim != 2 or x.shape[1] % n_heads != 0:
        raise ShapeError(f"split_heads: cannot split {x.shape} into {n_heads} heads")
    t, d = x.shape
    dk = d // n_heads
    out_data = x.data.reshape(t, n_heads, dk).transpose(1, 0, 2)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.transpose(1, 0, 2).reshape(t, d))

    return _result(out_data, (x,), backward)


def merge_heads(x: Tensor) -> Tensor:
    """(n_heads, T, dk) -> (T, n_heads * dk). Inverse of :func:`split_heads`."""
    if x.ndim != 3:
        raise ShapeError(f"merge_heads: expected 3-D input, got {x.shape}")
    h, t, dk = x.shape
    out_data = x.data.transpose(1, 0, 2).reshape(t, h * dk)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(t, h, dk).transpose(1, 0, 2))

    return _result(out_data, (x,), backward)


def concat_last_dim(*xs: Tensor) -> Tensor:
    """Concatenate along the last dimension; leading dims must agree."""
    if len(xs) < 2:
        raise ShapeError("concat_last_dim: need at least two tensors")
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last_dim: leading dims differ: {xs[0].shape} vs {t.shape}"
            )
    out_data = np.concatenate([t.data for t in xs], axis=-1)
    widths = [t.shape[-1] for t in xs]

    def backward(g):
        offset = 0
        for t, w in zip(xs, widths):
            if t.requires_grad:
                t.accumulate_grad(g[..., offset : offset + w])
            offset += w

    return _result(out_data, xs, backward)


def mean_over(xs) -> Tensor:
    """Elementwise mean of a list of equal-shaped tensors."""
    xs = list(xs)
    if not xs:
        raise ShapeError("mean_over: empty list")
    shape = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape:
            raise ShapeError(f"mean_over: shape mismatch {shape} vs {t.shape}")
    n = len(xs)
    out_data = sum(t.data for t in xs) / n

    def backward(g):
        gn = g / n
        for t in xs:
            if t.requires_grad:
                t.accumulate_grad(gn)

    return _result(out_data, tuple(xs), backward)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.shape).copy())

    return _result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# normalization / softmax


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last dimension, stabilized by max subtraction."""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * p).sum(axis=-1, keepdims=True)
            x.accumulate_grad(p * (g - dot))

    return _result(p, (x,), backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("log_softmax_rows: NaN in input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse
    p = np.exp(out_data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g - p * g.sum(axis=-1, keepdims=True))

    return _result(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each row over the last dimension, then apply affine gain/bias."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm: last dim must be >= 2, got {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match input {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True)
            term -= xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * term)

    return _result(out_data, (x, gain, bias), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row lookup; gradients flow to the looked-up rows of ``table`` only."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = int(ids[(ids < 0) | (ids >= n)][0])
        raise IndexError(f"embedding_lookup: id {bad} out of range [0, {n})")
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _result(out_data, (table,), backward)
