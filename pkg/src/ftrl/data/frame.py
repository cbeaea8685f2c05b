from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

REQUIRED_COLUMNS = ("timestamp", "close")
PRICE_COLUMNS = ("open", "low", "high", "close", "volume")


class SchemaError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass
class SeriesFrame:
    """Aligned named series over strictly increasing timestamps."""

    timestamps: np.ndarray
    columns: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps)
        n = len(self.timestamps)
        for name, col in self.columns.items():
            if len(col) != n:
                raise ValueError(f"column {name!r} has length {len(col)}, expected {n}")
        if n > 1 and not (self.timestamps[1:] > self.timestamps[:-1]).all():
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        return np.stack([self.columns[n] for n in names], axis=1)

    def slice_rows(self, start: int, stop: int | None = None) -> "SeriesFrame":
        return SeriesFrame(self.timestamps[start:stop], {k: v[start:stop] for k, v in self.columns.items()},
                           dict(self.meta))


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise CsvFormatError(f"line {line}: column {column!r}: cannot parse {text!r} as a number") from None


def load_csv(path: str | Path, required: Sequence[str] = REQUIRED_COLUMNS) -> SeriesFrame:
    """Read a UTF-8, comma-separated price file with a header row.

    ``timestamp`` holds ISO-8601 dates. Required numeric columns must be
    filled on every row; empty cells in other columns become NaN gaps (for
    slowly refreshing series that are forward-filled later).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header with {list(required)}") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {missing}")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        ts_idx = header.index("timestamp")
        stamps: list[np.datetime64] = []
        values: dict[str, list[float]] = {h: [] for h in header if h != "timestamp"}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"line {line}: expected {len(header)} fields, found {len(row)}")
            try:
                stamps.append(np.datetime64(row[ts_idx].strip(), "D"))
            except ValueError:
                raise CsvFormatError(f"line {line}: bad timestamp {row[ts_idx]!r}") from None
            for name, cell in zip(header, row):
                if name == "timestamp":
                    continue
                cell = cell.strip()
                if cell == "":
                    if name in required:
                        raise CsvFormatError(f"line {line}: required column {name!r} is empty")
                    values[name].append(np.nan)
                else:
                    values[name].append(_parse_float(cell, line, name))
    if not stamps:
        raise SchemaError(f"{path}: no data rows")
    ts = np.array(stamps)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    dup = np.nonzero(ts[1:] == ts[:-1])[0]
    if len(dup):
        raise CsvFormatError(f"duplicate timestamp {ts[dup[0]]}")
    cols = {k: np.asarray(v, dtype=np.float64)[order] for k, v in values.items()}
    return SeriesFrame(ts, cols, {"source": str(path)})


def write_csv(frame: SeriesFrame, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *frame.names])
        for i, t in enumerate(frame.timestamps):
            w.writerow([str(t), *("" if np.isnan(frame[c][i]) else repr(float(frame[c][i])) for c in frame.names)])
