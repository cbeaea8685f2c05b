"""Central finite-difference oracle for checking analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor only matters where both values sit at the finite-difference
    noise level; there the comparison degrades to an absolute one.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """d fn / d x by central differences, perturbing ``x.data`` in place.

    When ``indices`` is given only those entries are probed; the rest of the
    returned array is NaN.
    """
    out = np.full(x.data.shape, np.nan) if indices is not None else np.zeros(x.data.shape)
    probe = indices if indices is not None else list(np.ndindex(*x.data.shape))
    for idx in probe:
        orig = x.data[idx]
        with no_grad():
            x.data[idx] = orig + h
            fp = float(fn().data.reshape(-1)[0])
            x.data[idx] = orig - h
            fm = float(fn().data.reshape(-1)[0])
        x.data[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    max_probes: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` must rebuild its graph from ``inputs`` on every call. With
    ``max_probes`` set, each input is probed on a random subset of entries.
    """
    for t in inputs:
        t.data = np.array(t.data, dtype=np.float64)
    analytic = grad(fn(), inputs)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        idx = None
        if max_probes is not None and t.data.size > max_probes:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(t.data.size, size=max_probes, replace=False)
            idx = [np.unravel_index(int(i), t.data.shape) for i in flat]
        n = numeric_grad(fn, t, h, idx)
        mask = ~np.isnan(n)
        if mask.any():
            worst = max(worst, float(relative_error(a[mask], n[mask]).max()))
    return worst
