"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op builds a node holding its output value, its parent tensors and a
closure that maps the output gradient to parent gradients. ``backward``
walks the graph in reverse topological order.

Complex quantities are real tensors whose trailing axis has size 2
(real, imaginary). The ``c*`` ops below interpret that axis.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DimensionError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data):
    return Tensor(data)


def detach(x):
    return Tensor(as_tensor(x).data)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def square(x):
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------- reductions / shape

def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def absmax(x, axis=None, keepdims=False):
    """max |x| over ``axis``; the gradient goes to the maximising entries, split evenly on ties."""
    x = as_tensor(x)
    mag = np.abs(x.data)
    peak = mag.max(axis=axis, keepdims=True)
    hit = (mag == peak).astype(float)
    share = np.sign(x.data) * hit / hit.sum(axis=axis, keepdims=True)
    out = peak if keepdims else np.squeeze(peak, axis=axis)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * x.ndim)
        return (g * share,)

    return _make(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x, index):
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), backward)


def take(x, indices, axis=0):
    """Gather along ``axis``; repeated indices accumulate their gradients."""
    x = as_tensor(x)
    indices = np.asarray(indices)

    def backward(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(np.take(x.data, indices, axis=axis), (x,), backward)


def broadcast_to(x, shape):
    x = as_tensor(x)
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape),
                            _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)))


def to_complex(arr):
    return arr[..., 0] + 1j * arr[..., 1]


def from_complex(z):
    return np.stack([z.real, z.imag], axis=-1)


def _check_complex(*ts):
    for t in ts:
        if t.shape[-1] != 2:
            raise DimensionError(f"complex tensor needs trailing axis 2, got {t.shape}")


def cmatmul(a, b):
    """Complex matrix product of [...,M,K,2] and [...,K,N,2]."""
    a, b = as_tensor(a), as_tensor(b)
    _check_complex(a, b)
    ac, bc = to_complex(a.data), to_complex(b.data)
    if ac.shape[-1] != bc.shape[-2]:
        raise DimensionError(f"cmatmul shape mismatch {a.shape} @ {b.shape}")
    out = ac @ bc

    def backward(g):
        gc = to_complex(g)
        ga = gc @ np.conj(np.swapaxes(bc, -1, -2))
        gb = np.conj(np.swapaxes(ac, -1, -2)) @ gc
        return (_unbroadcast(from_complex(ga), a.shape), _unbroadcast(from_complex(gb), b.shape))

    return _make(from_complex(out), (a, b), backward)


def conj(x):
    x = as_tensor(x)
    _check_complex(x)
    flip = np.array([1.0, -1.0])
    return _make(x.data * flip, (x,), lambda g: (g * flip,))


def cswap(x):
    """Plain (non-conjugating) transpose of the two matrix axes of a complex tensor."""
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return transpose(x, tuple(axes))


def csolve(m, b):
    """Solve M X = B for complex M [...,n,n,2] and B [...,n,k,2]."""
    m, b = as_tensor(m), as_tensor(b)
    _check_complex(m, b)
    mc, bc = to_complex(m.data), to_complex(b.data)
    x = np.linalg.solve(mc, bc)

    def backward(g):
        gc = to_complex(g)
        gb = np.linalg.solve(np.conj(np.swapaxes(mc, -1, -2)), gc)
        gm = -gb @ np.conj(np.swapaxes(x, -1, -2))
        return (_unbroadcast(from_complex(gm), m.shape), _unbroadcast(from_complex(gb), b.shape))

    return _make(from_complex(x), (m, b), backward)


def cabs(x, eps=1e-12):
    """Modulus of a complex tensor; ``eps`` keeps the gradient finite at 0."""
    x = as_tensor(x)
    _check_complex(x)
    return sqrt(tsum(square(x), axis=-1, keepdims=True) + eps)
