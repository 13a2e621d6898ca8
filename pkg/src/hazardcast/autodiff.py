"""Dense float64 arrays with reverse-mode automatic differentiation.

Deliberately small: only the operations the sequence models need (matmul,
elementwise arithmetic, tanh / sigmoid / exp / log, softmax, concatenation,
basic slicing, reshapes and axis reductions). Ops build the graph eagerly;
``backward`` walks it once in reverse topological order. Each call to
``backward`` adds its contribution into ``Tensor.grad``, so gradients
accumulate until explicitly zeroed, matching the usual training-loop
semantics.

``exp`` clamps its input at ``EXP_CLAMP`` so no forward op produces NaN or
Inf from finite inputs; clamp events are counted and can be inspected via
``exp_clamp_events``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

EXP_CLAMP = 50.0

_grad_enabled = True
_exp_clamp_events = 0


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def exp_clamp_events() -> int:
    """Number of elements clamped by ``exp`` since the last reset."""
    return _exp_clamp_events


def reset_exp_clamp_events() -> None:
    global _exp_clamp_events
    _exp_clamp_events = 0


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients.

    ``grad`` has the same shape as ``value`` and is lazily allocated; it is
    only meaningful after ``backward`` has been called on a scalar that
    depends on this tensor.
    """

    __slots__ = ("value", "_grad", "_parents", "_backward_fn")

    def __init__(self, value, _parents: tuple = (), _backward_fn: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad: np.ndarray | None = None
        if _grad_enabled:
            self._parents = _parents
            self._backward_fn = _backward_fn
        else:
            self._parents = ()
            self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, new: np.ndarray) -> None:
        new = np.asarray(new, dtype=np.float64)
        if new.shape != self.value.shape:
            raise ShapeError(f"grad shape {new.shape} does not match value shape {self.value.shape}")
        self._grad = new

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        backward(self)

    # operator sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def softmax(self, axis=-1):
        return softmax(self, axis=axis)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``grad`` for every node below ``root``.

    ``root`` must be scalar. Contributions from shared subexpressions are
    summed; a second call without zeroing doubles every gradient.
    """
    if root.size != 1:
        raise ShapeError(f"backward requires a scalar root, got shape {root.shape}")

    # iterative depth-first topological sort (graphs can be deep)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    # propagate through a per-call map, then fold into persistent grads,
    # so repeated backward calls add exactly one contribution each
    flowing: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node._backward_fn is None:
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None:
                continue
            acc = flowing.get(id(parent))
            flowing[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# forward ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward_fn(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(value, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward_fn(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return Tensor(value, (a, b), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    try:
        value = a.value @ b.value
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward_fn(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Tensor(value, (a, b), backward_fn)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    value = a.value ** p

    def backward_fn(g):
        return (g * p * a.value ** (p - 1.0),)

    return Tensor(value, (a,), backward_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    value = np.tanh(a.value)

    def backward_fn(g):
        return (g * (1.0 - value * value),)

    return Tensor(value, (a,), backward_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    value = expit(a.value)

    def backward_fn(g):
        return (g * value * (1.0 - value),)

    return Tensor(value, (a,), backward_fn)


def exp(a) -> Tensor:
    """Elementwise exponential with the input clamped at ``EXP_CLAMP``.

    Clamped elements have zero derivative (the clamped function is constant
    there) and are counted in ``exp_clamp_events``.
    """
    global _exp_clamp_events
    a = as_tensor(a)
    clamped = a.value > EXP_CLAMP
    n_clamped = int(clamped.sum())
    if n_clamped:
        _exp_clamp_events += n_clamped
        value = np.exp(np.minimum(a.value, EXP_CLAMP))
    else:
        value = np.exp(a.value)

    def backward_fn(g):
        out = g * value
        if n_clamped:
            out = np.where(clamped, 0.0, out)
        return (out,)

    return Tensor(value, (a,), backward_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    value = np.log(a.value)

    def backward_fn(g):
        return (g / a.value,)

    return Tensor(value, (a,), backward_fn)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        return (value * (g - inner),)

    return Tensor(value, (a,), backward_fn)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in parts)
        raise ShapeError(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    splits = np.cumsum([t.value.shape[axis] for t in parts])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(value, tuple(parts), backward_fn)


def getitem(a, key) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof); no fancy indexing."""
    a = as_tensor(a)
    value = a.value[key]

    def backward_fn(g):
        out = np.zeros_like(a.value)
        out[key] += g
        return (out,)

    return Tensor(value, (a,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    value = a.value.reshape(shape)

    def backward_fn(g):
        return (g.reshape(a.value.shape),)

    return Tensor(value, (a,), backward_fn)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    value = a.value.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return Tensor(value, (a,), backward_fn)


def _expand_axes(g: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    if keepdims or axis is None:
        return g
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in sorted(a % (g.ndim + len(axes)) for a in axes):
        g = np.expand_dims(g, ax)
    return g


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        return (np.broadcast_to(_expand_axes(np.asarray(g), axis, keepdims), a.value.shape),)

    return Tensor(value, (a,), backward_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))
