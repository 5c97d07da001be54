"""Forecast error metrics, non-stationary test subsets and ranking AUC."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..primitives import ThresholdSet, classify_shape, mean_shift_stat, shape_signs, volatility_stat
from ..series import Window


@dataclass(frozen=True)
class MetricsRow:
    mae: float
    mse: float
    rmse: float
    n: int

    def __post_init__(self):
        if min(self.mae, self.mse, self.rmse) < 0:
            raise ValueError("metrics must be nonnegative")
        if abs(self.rmse - math.sqrt(self.mse)) > 1e-9:
            raise ValueError("RMSE must equal sqrt(MSE)")

    def to_dict(self) -> dict:
        return {"n": self.n, "mae": self.mae, "mse": self.mse, "rmse": self.rmse}


def metrics(y_hat, y) -> MetricsRow:
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ValueError(f"prediction shape {y_hat.shape} does not match target shape {y.shape}")
    if y.size == 0:
        raise ValueError("metrics of an empty batch")
    err = y_hat - y
    mse = float(np.mean(err**2))
    return MetricsRow(float(np.mean(np.abs(err))), mse, math.sqrt(mse), int(y.shape[0]) if y.ndim else 1)


class Subset(str, enum.Enum):
    SHAPE_TRANSITION = "shape_transition"
    VOLATILITY_CHANGE = "volatility_change"
    MEAN_SHIFT = "mean_shift"


TRANSITION_SHAPES = ("peak", "trough", "oscillate")


def _is_transition(signs: np.ndarray) -> bool:
    # all-flat chunks classify as oscillate but contain no reversal
    nz = signs[signs != 0]
    return nz.size > 1 and bool(np.any(nz[1:] != nz[:-1]))


def nonstationary_subsets(windows: Sequence[Window], thr: ThresholdSet) -> dict[Subset, np.ndarray]:
    """Indices of windows in each (possibly overlapping) non-stationary scenario."""
    members = {s: [] for s in Subset}
    for i, w in enumerate(windows):
        if abs(mean_shift_stat(w.x_obs, w.y_fut, thr.eps)) > thr.tau2_mean:
            members[Subset.MEAN_SHIFT].append(i)
        if abs(volatility_stat(w.x_obs, w.y_fut, thr.eps)) > thr.tau2_vol:
            members[Subset.VOLATILITY_CHANGE].append(i)
        signs = np.asarray(shape_signs(w.y_fut, thr.n_fcst, thr.tau_shape))
        if classify_shape(signs).value in TRANSITION_SHAPES and _is_transition(signs):
            members[Subset.SHAPE_TRANSITION].append(i)
    return {s: np.array(v, dtype=int) for s, v in members.items()}


def ranking_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
