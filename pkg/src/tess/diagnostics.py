"""Attention focus diagnostics for the direct fusion baseline."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baseline import BaselineFusionModel
from .benchmark import BenchmarkSample


def token_attention(alpha) -> np.ndarray:
    """Per-token weight: mean over every leading axis (heads, query patches)."""
    a = np.asarray(alpha, dtype=float)
    if a.ndim == 0:
        raise ValueError("attention weights need at least one token axis")
    return a.reshape(-1, a.shape[-1]).mean(axis=0)


def focus_ratio(alpha, sig_idx: Sequence[int], red_idx: Sequence[int]) -> float:
    """log of mean signal-token attention over mean redundant-token attention.

    Computed as a difference of logs so swapping the two sets negates it exactly.
    """
    if len(sig_idx) == 0 or len(red_idx) == 0:
        raise ValueError("focus_ratio needs non-empty signal and redundant index sets")
    per_token = token_attention(alpha)
    if np.any(per_token < 0):
        raise ValueError("attention weights must be nonnegative")
    a_sig = math.fsum(per_token[list(sig_idx)]) / len(sig_idx)
    a_red = math.fsum(per_token[list(red_idx)]) / len(red_idx)
    if a_red == 0.0:
        warnings.warn("redundant tokens receive zero attention; focus ratio is +inf", RuntimeWarning)
        return math.inf
    if a_sig == 0.0:
        return -math.inf
    return math.log(a_sig) - math.log(a_red)


@dataclass
class DiagnosticRow:
    index: int
    n_signal: int
    n_redundant: int
    focus: float
    mse_text: float
    mse_no_text: float

    @property
    def gain(self) -> float:
        return self.mse_no_text - self.mse_text


@dataclass
class DiagnosticReport:
    rows: list[DiagnosticRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def focus_values(self) -> np.ndarray:
        return np.array([r.focus for r in self.rows])

    @property
    def fraction_negative(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean(self.focus_values < 0))

    def gain_by_redundancy(self, n_bins: int = 5) -> list[dict]:
        """Mean gain and focus ratio per equal-width bin of redundant-token count."""
        if not self.rows:
            return []
        counts = np.array([r.n_redundant for r in self.rows], dtype=float)
        gains = np.array([r.gain for r in self.rows])
        lo, hi = counts.min(), counts.max()
        edges = np.linspace(lo, hi if hi > lo else lo + 1, n_bins + 1)
        which = np.clip(np.searchsorted(edges, counts, side="right") - 1, 0, n_bins - 1)
        table = []
        for b in range(n_bins):
            sel = which == b
            if not sel.any():
                continue
            table.append({
                "red_lo": float(edges[b]),
                "red_hi": float(edges[b + 1]),
                "count": int(sel.sum()),
                "mean_gain": float(gains[sel].mean()),
                "mean_focus": float(self.focus_values[sel].mean()),
            })
        return table


def histogram(values: Sequence[float], n_bins: int = 20) -> list[dict]:
    """Bin counts over the finite values; infinities are counted in the edge bins."""
    v = np.asarray(values, dtype=float)
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        return []
    lo, hi = float(finite.min()), float(finite.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(np.clip(v[~np.isnan(v)], lo, hi), bins=n_bins, range=(lo, hi))
    return [{"lo": float(edges[i]), "hi": float(edges[i + 1]), "count": int(c)} for i, c in enumerate(counts)]


def run_attention_diagnostic(baseline: BaselineFusionModel, samples: Sequence[BenchmarkSample],
                             batch_size: int = 64) -> DiagnosticReport:
    """Per-sample focus ratio and text gain (MSE without text minus MSE with text)."""
    report = DiagnosticReport()
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        X = np.stack([s.window.x_obs for s in chunk])
        Y = np.stack([s.window.y_fut for s in chunk])
        tokens = [list(s.text.tokens) for s in chunk]
        y_text, alpha = baseline.predict_batch(X, tokens)
        y_plain, _ = baseline.predict_batch(X, tokens, use_text=False)
        for i, s in enumerate(chunk):
            a = alpha[i][:, : len(s.text.tokens)]
            report.rows.append(
                DiagnosticRow(
                    index=start + i,
                    n_signal=len(s.text.sig_idx),
                    n_redundant=len(s.text.red_idx),
                    focus=focus_ratio(a, s.text.sig_idx, s.text.red_idx),
                    mse_text=float(np.mean((y_text[i] - Y[i]) ** 2)),
                    mse_no_text=float(np.mean((y_plain[i] - Y[i]) ** 2)),
                )
            )
    return report
