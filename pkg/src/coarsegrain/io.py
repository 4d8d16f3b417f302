"""CSV reading and writing with round-trip exact number formatting."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import EstimationError, TimeSeries

NUMBER_FORMAT = "%.17g"


def format_number(v) -> str:
    return NUMBER_FORMAT % v


def write_csv(path, header, columns) -> None:
    """Write equal-length numeric columns under ``header``."""
    columns = [np.asarray(c, dtype=np.float64) for c in columns]
    if len(header) != len(columns):
        raise ValueError("one header entry per column")
    if len({c.shape for c in columns}) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        if columns and columns[0].size:
            np.savetxt(fh, np.column_stack(columns), fmt=NUMBER_FORMAT, delimiter=",")


def write_series(path, series: TimeSeries, label: str = "value") -> None:
    write_csv(path, ["time", label], [series.times, series.values])


def write_pair(path, q: TimeSeries, p: TimeSeries) -> None:
    write_csv(path, ["time", "Q", "P"], [q.times, q.values, p.values])


def read_csv(path) -> dict:
    """Columns of a headed numeric CSV, keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EstimationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise EstimationError(f"{path}: {exc}") from None
    if data.size and data.shape[1] != len(header):
        raise EstimationError(f"{path}: rows do not match the header width")
    data = data.reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def read_series(path, column: str | None = None) -> TimeSeries:
    """Load a ``time,<value>`` CSV; ``column`` picks a value column by name."""
    cols = read_csv(path)
    if "time" not in cols:
        raise EstimationError(f"{path}: missing 'time' column")
    names = [c for c in cols if c != "time"]
    if column is None:
        if not names:
            raise EstimationError(f"{path}: no value column")
        column = names[0]
    if column not in cols:
        raise EstimationError(f"{path}: no column {column!r}; have {names}")
    t = cols["time"]
    if t.shape[0] < 2:
        raise EstimationError(f"{path}: need at least two samples")
    h = (t[-1] - t[0]) / (t.shape[0] - 1)
    if not h > 0 or np.max(np.abs(np.diff(t) - h)) > 1e-6 * h:
        raise EstimationError(f"{path}: samples are not uniformly spaced")
    # the spacing was printed from a short decimal; recover it
    h = float(f"{h:.12g}")
    return TimeSeries(cols[column], h, t[0])
