from __future__ import annotations

import numpy as np

from .frame import SeriesFrame
from .indicators import bollinger, forward_fill, log_returns, macd, rsi

DEFAULT_FEATURES = ("target", "rsi", "macd", "macd_signal", "macd_hist", "boll_pctb", "boll_width", "volume_chg")


def price_features(frame: SeriesFrame, train_fraction: float = 0.7, extra: tuple[str, ...] = ()) -> SeriesFrame:
    """Feature matrix for a price frame; column 0 is the target.

    The target is the log return of close. Every column is standardized with
    statistics of the first ``train_fraction`` of rows, rows still inside an
    indicator warm-up are dropped, and ``extra`` columns (slow series such as
    ESG scores) are forward-filled first.
    """
    close = frame["close"]
    r = np.concatenate([[np.nan], log_returns(close)])
    rs = rsi(close, 14) / 100.0 - 0.5
    line, sig, hist = macd(close)
    mid, up, lo = bollinger(close, 20, 2.0)
    width = up - lo
    pctb = np.where(width > 0, (close - lo) / np.where(width > 0, width, 1.0) - 0.5, 0.0)
    pctb[np.isnan(mid)] = np.nan
    cols = {
        "target": r,
        "rsi": rs,
        "macd": line / close,
        "macd_signal": sig / close,
        "macd_hist": hist / close,
        "boll_pctb": pctb,
        "boll_width": width / mid,
    }
    if "volume" in frame.columns:
        vol = np.maximum(frame["volume"], 1e-12)
        cols["volume_chg"] = np.concatenate([[np.nan], np.log(vol[1:] / vol[:-1])])
    else:
        cols["volume_chg"] = np.concatenate([[np.nan], np.zeros(len(close) - 1)])
    for name in extra:
        cols[name] = forward_fill(frame[name])
    mat = np.stack(list(cols.values()), axis=1)
    keep = ~np.isnan(mat).any(axis=1)
    first = int(np.argmax(keep)) if keep.any() else len(keep)
    mat = mat[first:]
    ts = frame.timestamps[first:]
    n_train = max(2, int(train_fraction * len(mat)))
    mu = mat[:n_train].mean(axis=0)
    sd = mat[:n_train].std(axis=0)
    mat = (mat - mu) / np.where(sd > 0, sd, 1.0)
    meta = dict(frame.meta)
    meta["standardization"] = {"mean": mu.tolist(), "std": sd.tolist()}
    return SeriesFrame(ts, {k: mat[:, i].copy() for i, k in enumerate(cols)}, meta)
