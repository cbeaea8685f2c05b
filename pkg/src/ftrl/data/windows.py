from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frame import SeriesFrame

SPLITS = ("train", "validation", "test")


@dataclass
class WindowedDataset:
    """Sliding-window (state, target) pairs.

    ``starts[i]`` is the first frame row of window i; its state covers rows
    [start, start+T) and its target rows [start+T, start+T+P) of the first
    feature column.
    """

    states: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    context_length: int
    horizon: int
    tags: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def has_split(self, tag: str) -> bool:
        return self.tags is not None and bool((self.tags == tag).any())

    def subset(self, tag: str) -> "WindowedDataset":
        if self.tags is None:
            raise ValueError("dataset has no split tags; call split() first")
        if tag not in SPLITS:
            raise ValueError(f"unknown split {tag!r}")
        m = self.tags == tag
        return WindowedDataset(self.states[m], self.targets[m], self.starts[m], self.context_length,
                               self.horizon, self.tags[m], self.timestamps, list(self.feature_names))

    def take(self, idx) -> "WindowedDataset":
        tags = self.tags[idx] if self.tags is not None else None
        return WindowedDataset(self.states[idx], self.targets[idx], self.starts[idx], self.context_length,
                               self.horizon, tags, self.timestamps, list(self.feature_names))

    def state_rows(self, i: int) -> range:
        s = int(self.starts[i])
        return range(s, s + self.context_length)

    def target_rows(self, i: int) -> range:
        s = int(self.starts[i]) + self.context_length
        return range(s, s + self.horizon)

    @property
    def num_features(self) -> int:
        return self.states.shape[2]


def make_windows(frame: SeriesFrame, context_length: int, horizon: int, stride: int = 1,
                 columns: Sequence[str] | None = None) -> WindowedDataset:
    """Cut a frame into windows; the first column is the prediction target."""
    if context_length < 1 or horizon < 1 or stride < 1:
        raise ValueError("context_length, horizon and stride must be >= 1")
    data = frame.matrix(columns)
    if np.isnan(data).any():
        raise ValueError("make_windows: frame has gaps; drop warm-up rows or forward-fill first")
    L = len(frame)
    need = context_length + horizon
    if L < need:
        raise ValueError(f"frame has {L} rows; at least T+P = {need} are required")
    count = (L - need) // stride + 1
    starts = np.arange(count) * stride
    states = np.stack([data[s:s + context_length] for s in starts])
    targets = np.stack([data[s + context_length:s + need, 0] for s in starts])
    return WindowedDataset(states, targets, starts, context_length, horizon,
                           timestamps=frame.timestamps, feature_names=list(columns or frame.names))


def split(dataset: WindowedDataset, fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)) -> WindowedDataset:
    """Tag windows train/validation/test in chronological order.

    Window counts are allotted by ``fractions``; the cut rows are the first
    state rows of the first validation and first test windows. A window is
    kept only if every row it touches lies inside its own segment, so
    windows straddling a cut are dropped.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    M = len(dataset)
    n_train = int(np.floor(fractions[0] * M + 1e-9))
    n_val = int(np.floor(fractions[1] * M + 1e-9))
    if n_train == 0 or n_val == 0 or M - n_train - n_val == 0:
        raise ValueError(f"split of {M} windows by {fractions} leaves an empty segment")
    starts = dataset.starts
    ends = starts + dataset.context_length + dataset.horizon  # exclusive
    cut1 = starts[n_train]
    cut2 = starts[n_train + n_val]
    tags = np.empty(M, dtype=object)
    idx = np.arange(M)
    tags[(idx < n_train) & (ends <= cut1)] = "train"
    tags[(idx >= n_train) & (idx < n_train + n_val) & (ends <= cut2)] = "validation"
    tags[idx >= n_train + n_val] = "test"
    keep = tags != None  # noqa: E711 - object array comparison
    for name in SPLITS:
        if not (tags[keep] == name).any():
            raise ValueError(f"split leaves no {name} windows after dropping boundary windows")
    out = dataset.take(np.nonzero(keep)[0])
    out.tags = tags[keep].astype(str)
    return out


def raw_split_counts(M: int, fractions=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    n_train = int(np.floor(fractions[0] * M + 1e-9))
    n_val = int(np.floor(fractions[1] * M + 1e-9))
    return n_train, n_val, M - n_train - n_val
