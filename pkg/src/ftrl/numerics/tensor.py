"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every tensor produced by an operation remembers its parents and a backward
closure. Node ids come from a process-wide counter, so sorting the reachable
subgraph by id gives the insertion order; :func:`grad` walks it in exact
reverse, which keeps gradients bit-reproducible.

2-D matrix products are evaluated one row at a time through numpy's stacked
matmul so that a row's result never depends on how many rows were batched
with it (BLAS switches kernels between gemv and gemm otherwise).
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

_ids = itertools.count()
_local = threading.local()


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf enters or appears in a tensor."""


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


def _debug() -> bool:
    return getattr(_local, "debug", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def set_debug(enabled: bool) -> None:
    """Toggle the per-operation NaN/Inf check on the current thread."""
    _local.debug = bool(enabled)


@contextmanager
def debug_mode(enabled: bool = True):
    prev = _debug()
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.id = next(_ids)
        self.name = name

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out.id = next(_ids)
        out.name = None
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        if _debug() and not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite output from {op}")
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data, t.requires_grad, t._parents, t._backward = self.data, False, (), None
        t.op, t.id, t.name = "leaf", next(_ids), None
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._result(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise ContractError("log: non-positive input")
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of the Gaussian error linear unit."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return Tensor._result(out, (a,), backward, "gelu")


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero wherever the clamp is active."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clip")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "minimum")
    take_a = a.data <= b.data

    def backward(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return Tensor._result(np.where(take_a, a.data, b.data), (a, b), backward, "minimum")


# ---------------------------------------------------------------- linear algebra

def _rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim == 2 and b.ndim == 2:
        return np.matmul(a[:, None, :], b)[:, 0, :]
    return np.matmul(a, b)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        # promote vectors so the general rule applies, then squeeze back
        a2 = reshape(a, (1, a.shape[0])) if a.ndim == 1 else a
        b2 = reshape(b, (b.shape[0], 1)) if b.ndim == 1 else b
        out = matmul(a2, b2)
        shape = out.shape
        if a.ndim == 1:
            shape = shape[:-2] + shape[-1:]
        if b.ndim == 1:
            shape = shape[:-1]
        return reshape(out, shape)
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(_rowwise_matmul(a.data, b.data), (a, b), backward, "matmul")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    out = a.data.sum(axis=axes, keepdims=keepdims) / n

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), backward, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (a,), backward, "softmax")


def layer_norm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean, unit (population) variance along ``axis``.

    ``eps`` must be positive for differentiation; ``eps=0`` is accepted for
    forward evaluation only when the variance is nonzero.
    """
    a = as_tensor(a)
    if eps < 0:
        raise ContractError("layer_norm: eps must be > 0")
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    if eps == 0 and (var == 0).any():
        raise ContractError("layer_norm: zero variance with eps=0")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = a.shape[axis]

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return Tensor._result(xhat, (a,), backward, "layer_norm")


def gaussian_log_prob(x, mean_, log_std) -> Tensor:
    """Elementwise log N(x; mean, exp(log_std)^2)."""
    x, mean_, log_std = as_tensor(x), as_tensor(mean_), as_tensor(log_std)
    try:
        shape = np.broadcast_shapes(x.shape, mean_.shape, log_std.shape)
    except ValueError:
        raise ContractError(
            f"gaussian_log_prob: incompatible shapes {x.shape}, {mean_.shape}, {log_std.shape}"
        ) from None
    inv_std = np.exp(-log_std.data)
    z = (x.data - mean_.data) * inv_std
    out = -0.5 * z * z - log_std.data - LOG_SQRT_2PI
    out = np.broadcast_to(out, shape).copy()

    def backward(g):
        dz = g * z * inv_std
        return (
            _unbroadcast(-dz, x.shape),
            _unbroadcast(dz, mean_.shape),
            _unbroadcast(g * (z * z - 1.0), log_std.shape),
        )

    return Tensor._result(out, (x, mean_, log_std), backward, "gaussian_log_prob")


# ---------------------------------------------------------------- shape

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractError(f"reshape: cannot view {a.shape} as {shape}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return Tensor._result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(np.array(out, dtype=np.float64), (a,), backward, "getitem")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ContractError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, ts, backward, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts], axis=axis)


# ---------------------------------------------------------------- differentiation

def _subgraph(output: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack_ = [output]
    while stack_:
        node = stack_.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack_.extend(p for p in node._parents if p.requires_grad and p.id not in seen)
    return sorted(seen.values(), key=lambda t: t.id, reverse=True)


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a one-element ``output`` with respect to each ``wrt`` node.

    Nodes not connected to ``output`` (or not tracking gradients) get zeros of
    their own shape. The graph is left untouched and may be differentiated
    again.
    """
    if output.data.size != 1:
        raise ContractError(f"grad: output must have exactly one element, got shape {output.shape}")
    wanted = {w.id for w in wrt}
    found: dict[int, np.ndarray] = {}
    if output.requires_grad:
        acc: dict[int, np.ndarray] = {output.id: np.ones_like(output.data)}
        for node in _subgraph(output):
            g = acc.pop(node.id, None)
            if g is None:
                continue
            if node.id in wanted:
                found[node.id] = g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                if parent.id in acc:
                    acc[parent.id] = acc[parent.id] + pg
                else:
                    acc[parent.id] = pg
    return [found[w.id] if w.id in found else np.zeros_like(w.data) for w in wrt]
