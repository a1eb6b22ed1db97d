"""Small NumPy-backed tensor with reverse-mode automatic differentiation.

Every differentiable primitive is registered under a string name and can be
invoked through :func:`apply` or through the helper functions and operator
overloads defined here. The graph is recorded as it is built; :func:`backward`
walks it in reverse construction order (tape style).

Only the primitives the forecasting model needs are provided. Binary
elementwise ops broadcast with NumPy rules and reduce gradients back to the
operand shapes.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "apply",
    "backward",
    "grad_check",
    "make_rng",
    "no_grad",
    "PRIMITIVES",
]

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's contract."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array that may take part in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return divide(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_ids)
    out._op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} are not compatible") from None


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need at least 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents {a.shape[-1]} and {b.shape[-2]} do not match "
            f"(shapes {a.shape} and {b.shape})"
        )
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} are not compatible") from None
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _matmul_operand_grad(g, b.data, a.shape, left=True)
        if b.requires_grad:
            gb = _matmul_operand_grad(g, a.data, b.shape, left=False)
        return ga, gb

    return _record(out, (a, b), grad_fn, "matmul")


def _matmul_operand_grad(g, other, shape, left):
    # left:  dA = g @ B^T ;  right: dB = A^T @ g
    nd = len(shape)
    if left:
        if other.ndim == 2 and nd >= 2:
            return g @ other.T if g.shape[:-1] == shape[:-1] else _unbroadcast(g @ other.T, shape)
        return _unbroadcast(np.matmul(g, np.swapaxes(other, -1, -2)), shape)
    extra = other.ndim - nd
    if extra > 0 and other.shape[extra:-2] == shape[:-2] and g.shape[extra:-2] == shape[:-2]:
        # fold the extra leading batch axes of the left operand into its row axis
        lead = other.shape[:extra]
        k = int(np.prod(lead))
        a2 = np.moveaxis(other.reshape((k,) + other.shape[extra:]), 0, -3)
        g2 = np.moveaxis(g.reshape((k,) + g.shape[extra:]), 0, -3)
        a2 = a2.reshape(shape[:-2] + (-1, other.shape[-1]))
        g2 = g2.reshape(shape[:-2] + (-1, g.shape[-1]))
        return np.matmul(np.swapaxes(a2, -1, -2), g2)
    return _unbroadcast(np.matmul(np.swapaxes(other, -1, -2), g), shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), grad_fn, "add")


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("subtract", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), grad_fn, "subtract")


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("multiply", a, b)

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), grad_fn, "multiply")


def divide(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("divide", a, b)
    out = a.data / b.data

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), grad_fn, "divide")


def scale(a, factor: float) -> Tensor:
    a = _as_tensor(a)
    factor = float(factor)
    return _record(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
    return _record(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in ts]} differ off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, ts, grad_fn, "concat")


def slice_(a, index) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not (isinstance(item, (slice, int, np.integer)) or item is Ellipsis):
            raise ShapeError(f"slice: only basic indexing is supported, got {item!r}")
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index} invalid for shape {a.shape}: {exc}") from None

    def grad_fn(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _record(out, (a,), grad_fn, "slice")


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record(s, (a,), grad_fn, "softmax")


_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))

    def grad_fn(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return _record(x * cdf, (a,), grad_fn, "gelu")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must both be ({d},) for input {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def grad_fn(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _record(xhat * gain.data + bias.data, (x, gain, bias), grad_fn, "layer_norm")


def dropout(a, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout: kept activations are scaled by ``1 / (1 - rate)``."""
    a = _as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: an rng is required in training mode")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), grad_fn, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _record(np.asarray(out), (a,), grad_fn, "mean")


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size

    def grad_fn(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _record(np.asarray((diff * diff).mean()), (pred, target), grad_fn, "mse")


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "divide": divide,
    "scale": scale,
    "transpose": transpose,
    "reshape": reshape,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "slice": slice_,
    "softmax": softmax,
    "gelu": gelu,
    "relu": relu,
    "layer_norm": layer_norm,
    "dropout": dropout,
    "mean": mean,
    "sum": sum_,
    "mse": mse,
}


def apply(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Run primitive ``kind`` on ``inputs``; ``attrs`` are its keyword options.

    >>> apply("softmax", [Tensor([[0.0, 0.0]])]).data
    array([[0.5, 0.5]])
    """
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}; expected one of {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **attrs)


# ------------------------------------------------------------------ backward


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients accumulate across calls, so clear them between optimizer steps.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward: loss must be a scalar of shape () or (1,), got {loss.shape}")
    if not loss.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad and p._id not in nodes)

    grads: dict[int, np.ndarray] = {loss._id: np.ones(loss.shape)}
    # parents are always constructed before their children
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    components: Sequence[int] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error per component is ``|a - n| / max(|a|, |n|, 1e-8)``. ``components``
    restricts the check to the given flat indices of ``x``.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("grad_check: loss is not finite")
    backward(loss)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    x.grad = None

    base = x.data
    idx = np.arange(x.size) if components is None else np.asarray(components, dtype=int)
    numeric = np.empty(len(idx))
    with no_grad():
        for k, i in enumerate(idx):
            pert = base.copy()
            pert.reshape(-1)[i] += eps
            x.data = pert
            fp = f(x).item()
            pert = base.copy()
            pert.reshape(-1)[i] -= eps
            x.data = pert
            fm = f(x).item()
            numeric[k] = (fp - fm) / (2.0 * eps)
    x.data = base

    a = analytic.reshape(-1)[idx]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(numeric))):
        raise FloatingPointError("grad_check: non-finite gradient encountered")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom)) if len(idx) else 0.0
