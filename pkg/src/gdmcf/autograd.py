"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the denoiser needs are provided. Each op records its
parents and a closure mapping the output gradient to parent gradients;
``Tensor.backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np

NORM_FLOOR = 1e-12


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return _make(self.value.T, (self,), lambda g: (g.T,))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        other = _lift(other)
        return _make(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        return _make(
            self.value - other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), -_unbroadcast(g, other.shape)),
        )

    def __neg__(self):
        return _make(-self.value, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = _lift(other)
        a, b = self.value, other.value
        return _make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, c: float):
        return self * (1.0 / c)

    def __matmul__(self, other):
        other = _lift(other)
        a, b = self.value, other.value
        return _make(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return _make(self.value[idx], (self,), back)

    def sum(self):
        shape = self.shape
        return _make(self.value.sum(), (self,), lambda g: (np.full(shape, g),))

    def mean(self):
        return self.sum() * (1.0 / max(self.value.size, 1))

    def square(self):
        v = self.value
        return _make(v * v, (self,), lambda g: (2.0 * v * g,))

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if not p.requires_grad or pg is None:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward) -> Tensor:
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents, backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def concat(tensors, axis=1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), back)


def sparse_matmul(s, x: Tensor) -> Tensor:
    """Constant sparse matrix ``s`` times tensor ``x``."""
    x = _lift(x)
    return _make(np.asarray(s @ x.value), (x,), lambda g: (np.asarray(s.T @ g),))


def linear_op(fn, x: Tensor, adjoint=None) -> Tensor:
    """Apply a constant linear map; ``adjoint`` defaults to ``fn`` (self-adjoint)."""
    adjoint = adjoint or fn
    return _make(fn(x.value), (x,), lambda g: (adjoint(g),))


def normalize_rows(x: Tensor) -> Tensor:
    """Unit-normalize each row; rows with norm below the floor map to zero."""
    v = x.value
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    ok = norms > NORM_FLOOR
    inv = np.where(ok, 1.0 / np.where(ok, norms, 1.0), 0.0)
    out = v * inv

    def back(g):
        # d(v/|v|) = (g - u <g,u>) / |v|
        return ((g - out * np.sum(g * out, axis=1, keepdims=True)) * inv,)

    return _make(out, (x,), back)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    return normalize_rows(a) @ normalize_rows(b).T


def log_softmax_diag_sum(logits: Tensor) -> Tensor:
    """Sum over rows of -log softmax(row)[i] at the diagonal position."""
    v = logits.value
    shift = v.max(axis=1, keepdims=True)
    e = np.exp(v - shift)
    z = e.sum(axis=1, keepdims=True)
    n = v.shape[0]
    diag = v[np.arange(n), np.arange(n)]
    loss = float(np.sum(np.log(z[:, 0]) + shift[:, 0] - diag))
    probs = e / z

    def back(g):
        d = probs.copy()
        d[np.arange(n), np.arange(n)] -= 1.0
        return (g * d,)

    return _make(loss, (logits,), back)


def stack_mean(tensors) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    k = len(tensors)
    value = sum(t.value for t in tensors) / k
    return _make(value, tuple(tensors), lambda g: tuple(g / k for _ in tensors))
