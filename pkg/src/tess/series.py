"""Time-series container, windowing, instance normalization and patching.

All primitive and forecasting math runs on a single target channel; the
remaining channels of a :class:`TimeSeries` are carried along for loaders only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

EPS_NORM = 1e-8


class InsufficientLengthError(ValueError):
    """Raised when a series is too short for the requested windowing."""


@dataclass(frozen=True)
class TimeSeries:
    timestamps: np.ndarray
    values: np.ndarray
    channel_names: tuple[str, ...] = ("value",)
    target_channel: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ValueError(f"values must be 2-d (T x d), got shape {vals.shape}")
        if ts.ndim != 1 or ts.shape[0] != vals.shape[0]:
            raise ValueError(
                f"timestamp count {ts.shape[0]} does not match value rows {vals.shape[0]}"
            )
        if ts.shape[0] > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        names = tuple(self.channel_names)
        if len(names) != vals.shape[1]:
            raise ValueError(f"{len(names)} channel names for {vals.shape[1]} channels")
        if not 0 <= self.target_channel < vals.shape[1]:
            raise ValueError(f"target_channel {self.target_channel} out of range")
        ts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "channel_names", names)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def target(self) -> np.ndarray:
        return self.values[:, self.target_channel]

    @classmethod
    def from_values(cls, values, start: float = 0.0, period: float = 86400.0) -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        ts = start + period * np.arange(values.shape[0], dtype=float)
        return cls(ts, values)


@dataclass(frozen=True)
class Window:
    x_obs: np.ndarray
    y_fut: Optional[np.ndarray] = None
    origin_index: int = 0
    raw_covariates: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x_obs, dtype=float)
        if x.ndim != 1 or x.shape[0] < 2:
            raise ValueError("x_obs must be a 1-d array with at least 2 values")
        object.__setattr__(self, "x_obs", x)
        if self.y_fut is not None:
            y = np.asarray(self.y_fut, dtype=float)
            if y.ndim != 1 or y.shape[0] < 2:
                raise ValueError("y_fut must be a 1-d array with at least 2 values")
            object.__setattr__(self, "y_fut", y)

    @property
    def L(self) -> int:
        return self.x_obs.shape[0]

    @property
    def H(self) -> int:
        return 0 if self.y_fut is None else self.y_fut.shape[0]


@dataclass(frozen=True)
class NormStats:
    mu: float
    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"normalization scale must be positive, got {self.s}")


@dataclass(frozen=True)
class PatchGrid:
    P: int
    S: int
    N: int

    @classmethod
    def for_length(cls, L: int, P: int, S: int) -> "PatchGrid":
        if not 1 <= P <= L:
            raise ValueError(f"patch length P={P} must satisfy 1 <= P <= L={L}")
        if S < 1:
            raise ValueError(f"stride S={S} must be >= 1")
        return cls(P, S, (L - P) // S + 1)


def slide_windows(series: TimeSeries, L: int, H: int, step: int = 1) -> list[Window]:
    if L < 2:
        raise ValueError("L must be >= 2")
    if H < 0 or H == 1 or step < 1:
        raise ValueError("H must be 0 or >= 2, and step >= 1")
    total = len(series)
    if total < L + H:
        raise InsufficientLengthError(
            f"insufficient length: series has {total} steps, need at least L + H = {L + H}"
        )
    target = series.target
    windows = []
    for origin in range(0, total - L - H + 1, step):
        y = target[origin + L : origin + L + H] if H > 0 else None
        windows.append(
            Window(
                x_obs=target[origin : origin + L],
                y_fut=y,
                origin_index=origin,
                raw_covariates=series.values[origin : origin + L],
            )
        )
    return windows


def instance_normalize(x, eps_norm: float = EPS_NORM) -> tuple[np.ndarray, NormStats]:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError("instance normalization needs at least 2 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("instance_normalize: non-finite input values")
    mu = float(x.mean())
    s = max(float(x.std()), eps_norm)
    return (x - mu) / s, NormStats(mu, s)


def inverse_normalize(x_norm, stats: NormStats) -> np.ndarray:
    x_norm = np.asarray(x_norm, dtype=float)
    if not np.all(np.isfinite(x_norm)):
        raise ValueError("inverse_normalize: non-finite input values")
    return stats.s * x_norm + stats.mu


def batch_normalize(X, eps_norm: float = EPS_NORM) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise :func:`instance_normalize` for a (B, L) batch; returns (X_norm, mu, s)."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("batch_normalize: non-finite input values")
    mu = X.mean(axis=1)
    s = np.maximum(X.std(axis=1), eps_norm)
    return (X - mu[:, None]) / s[:, None], mu, s


def patchify(x_norm, P: int, S: int) -> np.ndarray:
    """Cut the last axis into patches of length P at stride S; trailing samples are dropped."""
    x_norm = np.asarray(x_norm, dtype=float)
    L = x_norm.shape[-1]
    if P > L:
        raise ValueError(f"patch length P={P} exceeds input length L={L}")
    grid = PatchGrid.for_length(L, P, S)
    idx = np.arange(grid.N)[:, None] * S + np.arange(P)[None, :]
    return x_norm[..., idx]


def first_difference(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 2:
        raise ValueError("first_difference needs at least 2 values")
    return v[..., 1:] - v[..., :-1]
