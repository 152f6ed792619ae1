"""Minimal reverse-mode automatic differentiation on numpy arrays.

Just enough tape machinery for the models in this package: broadcasting
arithmetic, (batched) matmul, reshapes, slicing, concatenation, reductions,
softmax and the usual pointwise nonlinearities. Gradients are validated
against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(data: np.ndarray, parents: tuple[Var, ...], backward) -> Var:
    """Create a graph node; collapses to a constant if no parent needs grads."""
    out = Var(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(parent: Var, grad: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = np.array(grad)  # own the buffer; grad may be a view
    else:
        parent.grad += grad


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _sum_to_shape(g, a.data.shape))
        _accum(b, _sum_to_shape(g, b.data.shape))

    return _node(data, (a, b), backward)


def neg(a) -> Var:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _sum_to_shape(g * b.data, a.data.shape))
        _accum(b, _sum_to_shape(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def div(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def backward(g):
        _accum(a, _sum_to_shape(g / b.data, a.data.shape))
        _accum(b, _sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(data, (a, b), backward)


def matmul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    data = a.data @ b.data

    def backward(g):
        _accum(a, _sum_to_shape(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _sum_to_shape(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(data, (a, b), backward)


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape) -> Var:
    a = _wrap(a)
    orig = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(orig)))


def swapaxes(a, ax1: int, ax2: int) -> Var:
    a = _wrap(a)
    return _node(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: _accum(a, np.swapaxes(g, ax1, ax2))
    )


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice, type(Ellipsis))) for i in items)


def getitem(a, idx) -> Var:
    a = _wrap(a)
    data = a.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if basic:  # basic slices never alias, so += is safe and fast
            a.grad[idx] += g
        else:
            np.add.at(a.grad, idx, g)

    return _node(data, (a,), backward)


def concat(parts, axis: int = 0) -> Var:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _node(data, tuple(parts), backward)


# -- reductions ---------------------------------------------------------------


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), backward)


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- pointwise ----------------------------------------------------------------


def exp(a) -> Var:
    a = _wrap(a)
    data = np.exp(a.data)
    return _node(data, (a,), lambda g: _accum(a, g * data))


def log(a) -> Var:
    a = _wrap(a)
    return _node(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def sqrt(a) -> Var:
    a = _wrap(a)
    data = np.sqrt(a.data)
    return _node(data, (a,), lambda g: _accum(a, 0.5 * g / data))


def tanh(a) -> Var:
    a = _wrap(a)
    data = np.tanh(a.data)
    return _node(data, (a,), lambda g: _accum(a, g * (1.0 - data * data)))


def sigmoid(a) -> Var:
    a = _wrap(a)
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(data, (a,), lambda g: _accum(a, g * data * (1.0 - data)))


def relu(a) -> Var:
    a = _wrap(a)
    keep = a.data > 0
    return _node(np.where(keep, a.data, 0.0), (a,), lambda g: _accum(a, g * keep))


def square(a) -> Var:
    a = _wrap(a)
    return mul(a, a)


def softmax(a, axis: int = -1) -> Var:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - dot))

    return _node(data, (a,), backward)


def layer_norm(a, gain: Var, bias: Var, eps: float = 1e-5) -> Var:
    """Normalize over the last axis, then apply gain and bias."""
    mu = vmean(a, axis=-1, keepdims=True)
    centered = a - mu
    var = vmean(square(centered), axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


# -- graph execution ----------------------------------------------------------


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable parameter."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- parameters ---------------------------------------------------------------


class ParamStore:
    """Ordered, named registry of trainable parameters.

    Registry (insertion) order defines the layout of the flat vector used by
    checkpoints and gradient checks.
    """

    def __init__(self):
        self._params: dict[str, Var] = {}

    def param(self, name: str, array: np.ndarray) -> Var:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        v = Var(np.array(array, dtype=float), requires_grad=True)
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def variables(self) -> list[Var]:
        return list(self._params.values())

    @property
    def n_params(self) -> int:
        return sum(v.data.size for v in self._params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.data.ravel() for v in self._params.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError("flat vector size mismatch")
        pos = 0
        for v in self._params.values():
            n = v.data.size
            v.data = vec[pos : pos + n].reshape(v.data.shape).copy()
            pos += n

    def grad_flat(self) -> np.ndarray:
        out = []
        for v in self._params.values():
            g = v.grad if v.grad is not None else np.zeros_like(v.data)
            out.append(g.ravel())
        return np.concatenate(out)

    def zero_grad(self) -> None:
        for v in self._params.values():
            v.grad = None


def clip_global_norm(stores, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`."""
    total = 0.0
    for store in stores:
        for v in store.variables():
            if v.grad is not None:
                total += float((v.grad * v.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for store in stores:
            for v in store.variables():
                if v.grad is not None:
                    v.grad *= scale
    return norm


class Adam:
    """Adaptive-moment SGD over one or more parameter stores."""

    def __init__(self, stores, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.stores = list(stores)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(v.data) for s in self.stores for v in s.variables()]
        self._v = [np.zeros_like(v.data) for s in self.stores for v in s.variables()]

    def step(self) -> None:
        self.t += 1
        i = 0
        for store in self.stores:
            for var in store.variables():
                g = var.grad if var.grad is not None else np.zeros_like(var.data)
                self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
                self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * g * g
                m_hat = self._m[i] / (1 - self.beta1**self.t)
                v_hat = self._v[i] / (1 - self.beta2**self.t)
                var.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
                i += 1
