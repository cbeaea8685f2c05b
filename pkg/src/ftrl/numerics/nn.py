"""Minimal module system on top of :mod:`ftrl.numerics.tensor`.

Parameters are plain tensors with ``requires_grad=True``. Freezing a
parameter flips that flag off, so the differentiation pass never reaches it
and the optimizer never sees a gradient for it.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor, as_tensor, layer_norm, matmul, tanh


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Parameters in registration order; a tensor shared by two
        submodules is reported once, under its first name."""
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m._walk(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def set_frozen(self, frozen: bool) -> None:
        for p in self._all_param_tensors():
            p.requires_grad = not frozen

    def _all_param_tensors(self) -> list[Tensor]:
        # frozen tensors stay registered in _params even after requires_grad flips
        return self.parameters()

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise ValueError(f"shape mismatch {p.data.shape} vs {a.shape}")
            p.data = np.array(a, dtype=np.float64)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x @ W + b with W of shape (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 zero: bool = False, bias: bool = True):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        if zero or rng is None:
            w = np.zeros((in_dim, out_dim))
            b = np.zeros(out_dim)
        else:
            w = uniform_init(rng, in_dim, (in_dim, out_dim))
            b = uniform_init(rng, in_dim, (out_dim,))
        self.weight = param(w)
        self.bias = param(b) if bias else None

    def __call__(self, x) -> Tensor:
        y = matmul(as_tensor(x), self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = param(np.ones(dim))
        self.shift = param(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return layer_norm(x, axis=-1, eps=self.eps) * self.gain + self.shift


class MLP(Module):
    """Tanh multilayer perceptron; the output layer is linear."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, zero_last: bool = False):
        super().__init__()
        self.n_layers = len(sizes) - 1
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == self.n_layers - 1
            self.add_module(f"l{i}", Linear(a, b, rng, zero=zero_last and last))

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i in range(self.n_layers):
            h = getattr(self, f"l{i}")(h)
            if i < self.n_layers - 1:
                h = tanh(h)
        return h
