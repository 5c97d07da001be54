"""Confidence-aware gating of extracted primitive labels.

A predicted label is embedded through a per-kind learnable table, fused with the
extraction margin into a sigmoid confidence ``g``, and soft-weighted as ``g * h``.
The gate is supervised with binary cross-entropy against whether the predicted
label matched the ground-truth label computed from the forecast window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .primitives import PrimitiveKind, PrimitiveLabel

EPS_LOG = 1e-7


@dataclass
class EmbeddingTable:
    kind: PrimitiveKind
    rows: Tensor

    @classmethod
    def init(cls, kind: PrimitiveKind, d_model: int, rng: np.random.Generator) -> "EmbeddingTable":
        bound = 1.0 / np.sqrt(d_model)
        data = rng.uniform(-bound, bound, size=(len(kind.candidates), d_model))
        return cls(kind, Tensor(data, requires_grad=True, name=f"embed.{kind.value}"))

    @property
    def d_model(self) -> int:
        return self.rows.shape[1]


@dataclass
class GateParams:
    """Per-kind gate weights ``w`` (2*d_model) and bias ``b``; ``W_m`` is shared across kinds."""

    w: Tensor
    b: Tensor
    W_m: Tensor

    @classmethod
    def init(cls, kind: PrimitiveKind, d_model: int, W_m: Tensor) -> "GateParams":
        return cls(
            w=Tensor(np.zeros(2 * d_model), requires_grad=True, name=f"gate.{kind.value}.w"),
            b=Tensor(np.zeros(1), requires_grad=True, name=f"gate.{kind.value}.b"),
            W_m=W_m,
        )


@dataclass(frozen=True)
class GatedPrimitive:
    kind: PrimitiveKind
    label: PrimitiveLabel
    h: np.ndarray
    g: float
    h_tilde: np.ndarray


def embed_label(table: EmbeddingTable, label: PrimitiveLabel) -> Tensor:
    if label.kind is not table.kind:
        raise ValueError(f"label of kind {label.kind.value} used with the {table.kind.value} table")
    return ad.take_rows(table.rows, label.index)


def _check_finite(name: str, value) -> None:
    data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=float)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"gate_confidence: non-finite {name}")


def gate_logit(h, m, params: GateParams) -> Tensor:
    """Pre-sigmoid gate value ``w . [h ; W_m * m] + b``.

    ``h`` may be (d,) or (B, d) and ``m`` a scalar or (B,); the result is () or (B,).
    """
    h = ad.as_tensor(h)
    m_arr = np.asarray(ad.as_tensor(m).data, dtype=float)
    d = params.W_m.shape[0]
    if h.shape[-1] != d or params.w.shape[0] != 2 * d:
        raise ValueError(f"gate dimensions mismatch: h {h.shape}, w {params.w.shape}, W_m {params.W_m.shape}")
    w_h = ad.getitem(params.w, slice(0, d))
    w_m = ad.getitem(params.w, slice(d, 2 * d))
    # w_m . (W_m * m) == m * (w_m . W_m)
    margin_coef = ad.sum(ad.mul(w_m, params.W_m))
    if h.ndim == 1:
        emb_term = ad.sum(ad.mul(h, w_h))
        return ad.add(ad.add(emb_term, ad.mul(margin_coef, float(m_arr))), ad.sum(params.b))
    emb_term = ad.sum(ad.mul(h, w_h), axis=-1)
    return ad.add(ad.add(emb_term, ad.mul(margin_coef, m_arr)), ad.sum(params.b))


def gate_confidence(h, m, params: GateParams) -> Tensor:
    _check_finite("embedding", h)
    _check_finite("margin", m)
    return ad.sigmoid(gate_logit(h, m, params))


def soft_weight(g, h) -> Tensor:
    g, h = ad.as_tensor(g), ad.as_tensor(h)
    if np.any(g.data < 0) or np.any(g.data > 1):
        raise ValueError("gate values must lie in [0, 1]")
    if g.ndim == h.ndim - 1:
        g = ad.reshape(g, g.shape + (1,))
    return ad.mul(g, h)


def gated_primitive(table: EmbeddingTable, params: GateParams, label: PrimitiveLabel, m: float) -> GatedPrimitive:
    h = embed_label(table, label)
    g = gate_confidence(h, m, params)
    return GatedPrimitive(label.kind, label, h.data.copy(), float(g.data), soft_weight(g, h).data.copy())


def supervision_label(predicted: PrimitiveLabel, truth: PrimitiveLabel) -> int:
    if predicted.kind is not truth.kind:
        raise ValueError(f"cannot compare a {predicted.kind.value} label with a {truth.kind.value} label")
    return int(predicted.value == truth.value)


def gate_loss(gs, ys, weight=None, eps_log: float = EPS_LOG) -> Tensor:
    """Summed binary cross-entropy over all (sample, kind) terms."""
    gs = ad.as_tensor(gs)
    ys = np.asarray(ys, dtype=float)
    if gs.shape != ys.shape:
        raise ValueError(f"gate_loss: {gs.shape} gates vs {ys.shape} labels")
    if gs.data.size == 0:
        raise ValueError("gate_loss needs at least one term")
    return ad.binary_cross_entropy(gs, ys, weight=weight, eps_log=eps_log, reduction="sum")
