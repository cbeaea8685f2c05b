"""Price transforms and technical indicators.

Undefined warm-up outputs are NaN. EMAs are seeded with the first
observation; Bollinger bands use the population standard deviation.
"""

from __future__ import annotations

import numpy as np

from ..numerics import ContractError


def log_returns(close) -> np.ndarray:
    close = np.asarray(close, dtype=np.float64)
    if len(close) < 2:
        raise ContractError("log_returns needs at least 2 prices")
    if (close <= 0).any():
        raise ValueError("log_returns: prices must be strictly positive")
    return np.log(close[1:] / close[:-1])


def ema(x, span: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        acc = v if i == 0 else alpha * v + (1.0 - alpha) * acc
        out[i] = acc
    return out


def rsi(close, period: int = 14) -> np.ndarray:
    """Wilder-smoothed relative strength index in [0, 100].

    The first ``period`` entries are NaN; the seed averages are plain means
    of the first ``period`` gains and losses. A window with neither gains
    nor losses reads 50.
    """
    if period < 1:
        raise ContractError("rsi: period must be >= 1")
    close = np.asarray(close, dtype=np.float64)
    if len(close) <= period:
        raise ContractError(f"rsi: need more than {period} prices, got {len(close)}")
    delta = np.diff(close)
    gain = np.maximum(delta, 0.0)
    loss = np.maximum(-delta, 0.0)
    out = np.full(len(close), np.nan)
    avg_g = gain[:period].mean()
    avg_l = loss[:period].mean()
    for i in range(period, len(close)):
        if i > period:
            avg_g = (avg_g * (period - 1) + gain[i - 1]) / period
            avg_l = (avg_l * (period - 1) + loss[i - 1]) / period
        if avg_l == 0.0:
            out[i] = 50.0 if avg_g == 0.0 else 100.0
        else:
            out[i] = 100.0 - 100.0 / (1.0 + avg_g / avg_l)
    return out


def macd(close, fast: int = 12, slow: int = 26, signal: int = 9) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if fast >= slow:
        raise ContractError(f"macd: fast ({fast}) must be < slow ({slow})")
    close = np.asarray(close, dtype=np.float64)
    if len(close) <= slow:
        raise ContractError(f"macd: need more than {slow} prices, got {len(close)}")
    line = ema(close, fast) - ema(close, slow)
    sig = ema(line, signal)
    return line, sig, line - sig


def bollinger(close, period: int = 20, k: float = 2.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if period < 2:
        raise ContractError("bollinger: period must be >= 2")
    close = np.asarray(close, dtype=np.float64)
    if len(close) < period:
        raise ContractError(f"bollinger: need at least {period} prices, got {len(close)}")
    mid = np.full(len(close), np.nan)
    sd = np.full(len(close), np.nan)
    for i in range(period - 1, len(close)):
        w = close[i - period + 1:i + 1]
        m = w.mean()
        mid[i] = m
        sd[i] = np.sqrt(((w - m) ** 2).mean())
    return mid, mid + k * sd, mid - k * sd


def forward_fill(values) -> np.ndarray:
    """Replace NaN gaps with the most recent earlier value."""
    v = np.array(values, dtype=np.float64)
    if len(v) == 0:
        return v
    if np.isnan(v[0]):
        raise ValueError("forward_fill: leading gap has no earlier value to carry")
    for i in range(1, len(v)):
        if np.isnan(v[i]):
            v[i] = v[i - 1]
    return v
