"""Loaders for series CSV and text JSON-lines, plus text-to-window alignment."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..series import TimeSeries, Window, slide_windows

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    series_path: str
    text_path: Optional[str] = None
    target_channel: int = 0
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    L: int = 48
    H: int = 16
    step: int = 1

    def __post_init__(self):
        split = tuple(float(f) for f in self.split)
        if len(split) != 3 or any(f <= 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three positive numbers summing to 1, got {self.split}")
        object.__setattr__(self, "split", split)
        if self.L < 2 or self.H < 2 or self.step < 1:
            raise ValueError("need L >= 2, H >= 2 and step >= 1")
        if self.target_channel < 0:
            raise ValueError("target_channel must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def parse_timestamp(cell: str) -> float:
    """Epoch seconds from an ISO-8601 string or a plain number (already epoch)."""
    cell = cell.strip()
    try:
        value = float(cell)
    except ValueError:
        pass
    else:
        if not math.isfinite(value):
            raise ValueError(f"non-finite timestamp {cell!r}")
        return value
    text = cell[:-1] + "+00:00" if cell.endswith("Z") else cell
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def load_series_csv(path: PathLike, manifest: Optional[DatasetManifest] = None) -> TimeSeries:
    """First column is the timestamp; every other column is a numeric channel."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise DataFormatError(f"{path}: expected a header row with a timestamp and at least one channel")
    header, body = rows[0], [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    ts = np.empty(len(body))
    vals = np.empty((len(body), len(header) - 1))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {line} has {len(row)} cells, header has {len(header)}")
        try:
            ts[i] = parse_timestamp(row[0])
        except ValueError:
            raise DataFormatError(f"{path}: row {line}, column {header[0]!r}: bad timestamp {row[0]!r}") from None
        for j, cell in enumerate(row[1:]):
            try:
                vals[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: row {line}, column {header[j + 1]!r}: bad number {cell!r}") from None
            if not math.isfinite(vals[i, j]):
                raise DataFormatError(f"{path}: row {line}, column {header[j + 1]!r}: non-finite value")
    bad = np.nonzero(np.diff(ts) <= 0)[0]
    if bad.size:
        line = int(bad[0]) + 3
        raise DataFormatError(f"{path}: row {line}: timestamp not strictly after the previous row")
    target = manifest.target_channel if manifest is not None else 0
    if target >= vals.shape[1]:
        raise DataFormatError(f"{path}: target channel {target} out of range for {vals.shape[1]} channels")
    return TimeSeries(ts, vals, tuple(header[1:]), target)


@dataclass(frozen=True)
class TextRecord:
    timestamp: float
    text: str


def load_text_jsonl(path: PathLike, strict: bool = False, errors: Optional[list] = None) -> list[TextRecord]:
    """Records sorted by timestamp. Bad lines raise (strict) or are collected into ``errors``."""
    records, problems = [], []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("not a JSON object")
                if "timestamp" not in obj:
                    raise ValueError("missing 'timestamp'")
                if "text" not in obj or not isinstance(obj["text"], str):
                    raise ValueError("missing 'text'")
                records.append(TextRecord(parse_timestamp(str(obj["timestamp"])), obj["text"]))
            except ValueError as exc:
                problems.append(f"line {n}: {exc}")
    if problems:
        if strict:
            raise DataFormatError(f"{path}: " + "; ".join(problems))
        for p in problems:
            log.warning("%s: skipped %s", path, p)
        if errors is not None:
            errors.extend(problems)
    records.sort(key=lambda r: r.timestamp)
    return records


def window_span(window: Window, timestamps: np.ndarray) -> tuple[float, float]:
    return float(timestamps[window.origin_index]), float(timestamps[window.origin_index + window.L - 1])


def align_text(windows: Sequence[Window], texts: Sequence[TextRecord], timestamps) -> list[str]:
    """Texts whose timestamp lies inside each window's observation span, oldest first.

    Windows without any text get the empty string (extraction is skipped for them).
    """
    ts = np.asarray(timestamps, dtype=float)
    when = np.array([t.timestamp for t in texts], dtype=float)
    if when.size > 1 and np.any(np.diff(when) < 0):
        raise ValueError("texts must be sorted by timestamp")
    out = []
    for w in windows:
        lo, hi = window_span(w, ts)
        a, b = np.searchsorted(when, lo, side="left"), np.searchsorted(when, hi, side="right")
        chosen = texts[a:b]
        # no-lookahead audit
        assert all(lo <= t.timestamp <= hi for t in chosen)
        out.append("\n".join(t.text for t in chosen))
    return out


def chronological_split(series: TimeSeries, fractions: Sequence[float]) -> dict[str, TimeSeries]:
    n = len(series)
    cuts = np.round(np.cumsum([0.0, *fractions]) * n).astype(int)
    parts = {}
    for i, name in enumerate(("train", "val", "test")):
        lo, hi = int(cuts[i]), int(cuts[i + 1])
        parts[name] = TimeSeries(series.timestamps[lo:hi], series.values[lo:hi], series.channel_names,
                                 series.target_channel)
    return parts


def split_windows(series: TimeSeries, manifest: DatasetManifest) -> dict[str, tuple[list[Window], np.ndarray]]:
    """Windows per chronological split with the split's own timestamp array."""
    out = {}
    for name, part in chronological_split(series, manifest.split).items():
        out[name] = (slide_windows(part, manifest.L, manifest.H, manifest.step), part.timestamps)
    return out


def atomic_write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
