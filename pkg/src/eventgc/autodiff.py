"""Minimal reverse-mode differentiation over dense float64 arrays.

Every operation builds a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order. Gradients are accumulated in place, so a node shared by
several consumers receives the sum of their contributions.

Only tensors that (transitively) depend on a leaf created with
``requires_grad=True`` record backward closures; constant subgraphs cost
nothing extra.
"""
from __future__ import annotations

import builtins

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "concat",
    "slice",
    "stack",
    "gather_rows",
    "sum",
    "mean",
    "exp",
    "log",
    "sigmoid",
    "tanh",
    "softplus",
    "broadcast",
    "reshape",
    "backward",
    "grad",
]

_SOFTPLUS_LINEAR_CUTOFF = 30.0


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g, index=None, owned=False):
        # owned: g is a fresh temporary nobody else holds, so keep it uncopied
        if index is None:
            if self.grad is None:
                if owned and g.dtype == np.float64 and g.shape == self.shape:
                    self.grad = g
                else:
                    self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
            else:
                self.grad += g
        else:
            if self.grad is None:
                self.grad = np.zeros(self.shape)
            self.grad[index] += g

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(value, requires_grad=False):
    return Tensor(value, requires_grad=requires_grad)


def constant(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn, op):
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, backward_fn, op)
    return Tensor(value, op=op)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        # g is this node's private buffer, freed after the call: the first
        # parent may keep it, the second copies it (still unmodified)
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape), owned=not a.requires_grad)

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape), owned=True)

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape), owned=True)

    return _make(a.value * b.value, (a, b), bw, "mul")


def neg(a):
    a = _lift(a)
    return _make(-a.value, (a,), lambda g: a._accumulate(-g, owned=True), "neg")


def matmul(a, b):
    """``a @ b`` for a 2-D ``b`` (or a vector), with ``a`` of any rank >= 1."""
    a, b = _lift(a), _lift(b)
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T, owned=True)
        if b.requires_grad:
            a2 = a.value.reshape(-1, a.shape[-1])
            b._accumulate(a2.T @ g.reshape(-1, g.shape[-1]), owned=True)

    return _make(out, (a, b), bw, "matmul")


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ValueError("concat: shape mismatch")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [builtins.slice(None)] * ndim
                idx[ax] = builtins.slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.value for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    if len({t.shape for t in tensors}) != 1:
        raise ValueError("stack: shape mismatch")

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis), owned=True)

    return _make(np.stack([t.value for t in tensors], axis=axis), tuple(tensors), bw, "stack")


def slice_(a, index):
    a = _lift(a)
    out = a.value[index]

    def bw(g):
        a._accumulate(g, index)

    return _make(out, (a,), bw, "slice")


slice = slice_  # noqa: A001  public name matches the op list


def gather_rows(table, onehot):
    """Embedding lookup written as ``onehot @ table``.

    ``onehot`` rows are one-hot (or all zero for the null type), but any real
    weights are accepted so gradients flow into the selector itself.
    """
    return matmul(onehot, table)


def sum(a, axis=None):  # noqa: A001
    a = _lift(a)
    out = np.sum(a.value, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None):
    a = _lift(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / n)


def exp(a):
    a = _lift(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * out, owned=True), "exp")


def log(a):
    a = _lift(a)
    return _make(np.log(a.value), (a,), lambda g: a._accumulate(g / a.value, owned=True), "log")


def _sigmoid(x):
    return special.expit(x)


def sigmoid(a):
    a = _lift(a)
    out = _sigmoid(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out), owned=True), "sigmoid")


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out), owned=True), "tanh")


def _softplus(x):
    big = x > _SOFTPLUS_LINEAR_CUTOFF
    out = np.log1p(np.exp(np.where(big, 0.0, x)))
    if big.any():
        out[big] = x[big] + np.log1p(np.exp(-x[big]))
    return out


def softplus(a):
    a = _lift(a)
    out = _softplus(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * _sigmoid(a.value), owned=True), "softplus")


def broadcast(a, shape):
    a = _lift(a)
    out = np.broadcast_to(a.value, shape)
    return _make(out, (a,), lambda g: a._accumulate(_unbroadcast(g, a.shape)), "broadcast")


def reshape(a, shape):
    a = _lift(a)
    out = a.value.reshape(shape)
    return _make(out, (a,), lambda g: a._accumulate(g.reshape(a.shape), owned=True), "reshape")


def _toposort(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output):
    """Accumulate d(output)/d(node) into ``.grad`` of every node on the tape.

    Interior gradients are freed once consumed; leaves keep theirs.
    """
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    order = _toposort(output)
    output._accumulate(np.ones(output.shape))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None


def grad(fn, *args):
    """Gradients of scalar ``fn(*args)`` with respect to each array argument."""
    leaves = [Tensor(a, requires_grad=True) for a in args]
    out = fn(*leaves)
    backward(out)
    return [np.zeros(l.shape) if l.grad is None else l.grad for l in leaves]
