"""Primitive-conditioned patch transformer.

Gated primitive embeddings are stacked as K prefix rows in front of the patch
embeddings of an instance-normalized input window; a pre-norm transformer
encoder mixes both, and an MLP head maps the flattened patch outputs to the
horizon, which is then de-normalized.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gating import EmbeddingTable, GatedPrimitive, GateParams, gate_confidence, gate_loss
from .llm.extract import Extraction, ExtractionResult
from .optim import AdamW
from .primitives import KINDS, PrimitiveKind, PrimitiveVector, ThresholdSet, extract_all
from .series import EPS_NORM, NormStats, PatchGrid, Window, batch_normalize, patchify

log = logging.getLogger(__name__)

K_PRIMITIVES = len(KINDS)


@dataclass(frozen=True)
class ModelConfig:
    L: int = 48
    H: int = 16
    P: int = 8
    S: int = 8
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ff_width: int = 64
    lam: float = 0.1
    dropout_rate: float = 0.1
    seed: int = 0
    mode: str = "full"
    eps_norm: float = EPS_NORM
    gate_loss_reduction: str = "mean"  # mean over batch, summed over kinds

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        PatchGrid.for_length(self.L, self.P, self.S)
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        parse_mode(self.mode)
        if self.gate_loss_reduction not in ("mean", "sum"):
            raise ValueError("gate_loss_reduction must be 'mean' or 'sum'")

    @property
    def N(self) -> int:
        return PatchGrid.for_length(self.L, self.P, self.S).N

    @property
    def K(self) -> int:
        return 0 if self.mode == "no_tess" else K_PRIMITIVES


def parse_mode(mode: str) -> tuple[str, Optional[PrimitiveKind]]:
    if mode in ("full", "no_tess", "no_gating"):
        return mode, None
    if mode.startswith("drop:"):
        name = mode.split(":", 1)[1]
        try:
            return "drop", PrimitiveKind(name)
        except ValueError:
            raise ValueError(f"unknown primitive {name!r} in mode {mode!r}") from None
    raise ValueError(f"unknown model mode {mode!r}")


def ablation_variant(cfg: ModelConfig, mode: Union[str, tuple]) -> Callable[[], "PrefixForecaster"]:
    """Constructor for an ablated model: ``full``, ``no_tess``, ``no_gating`` or ``("drop_primitive", kind)``."""
    if isinstance(mode, tuple):
        tag, kind = mode
        if tag != "drop_primitive":
            raise ValueError(f"unknown ablation {mode!r}")
        try:
            mode = f"drop:{PrimitiveKind(kind).value}"
        except ValueError:
            raise ValueError(f"invalid primitive for drop_primitive: {kind!r}") from None
    return partial(PrefixForecaster, replace(cfg, mode=mode))


@dataclass
class PrimitiveInputs:
    """Per-window primitive extraction, arranged as (B, K) arrays in KINDS order."""

    labels: np.ndarray
    margins: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1, K_PRIMITIVES)
        self.margins = np.asarray(self.margins, dtype=float).reshape(-1, K_PRIMITIVES)
        self.present = np.asarray(self.present, dtype=bool).reshape(-1, K_PRIMITIVES)
        if not (self.labels.shape == self.margins.shape == self.present.shape):
            raise ValueError("labels, margins and present must share shape (B, K)")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "PrimitiveInputs":
        return PrimitiveInputs(self.labels[idx], self.margins[idx], self.present[idx])

    @classmethod
    def from_vectors(cls, vectors: Sequence[PrimitiveVector], margin: float = 4.0) -> "PrimitiveInputs":
        labels = np.array([v.indices() for v in vectors], dtype=int).reshape(-1, K_PRIMITIVES)
        return cls(labels, np.full(labels.shape, float(margin)), np.ones(labels.shape, dtype=bool))

    @classmethod
    def from_extractions(cls, extractions: Sequence[Optional[Mapping[PrimitiveKind, Extraction]]]) -> "PrimitiveInputs":
        n = len(extractions)
        labels = np.zeros((n, K_PRIMITIVES), dtype=int)
        margins = np.zeros((n, K_PRIMITIVES))
        present = np.zeros((n, K_PRIMITIVES), dtype=bool)
        for i, ex in enumerate(extractions):
            if not ex:
                continue
            for j, kind in enumerate(KINDS):
                res = ex.get(kind)
                if isinstance(res, ExtractionResult):
                    labels[i, j] = res.predicted.index
                    margins[i, j] = res.margin_m
                    present[i, j] = True
        return cls(labels, margins, present)


def truth_indices(windows: Sequence[Window], thr: ThresholdSet) -> np.ndarray:
    return np.array([extract_all(w.x_obs, w.y_fut, thr).indices() for w in windows], dtype=int).reshape(
        -1, K_PRIMITIVES
    )


# functional building blocks

def encode_patches(x_norm, W_p, W_pos, P: int, S: int) -> Tensor:
    """Patch embeddings: ``patchify(x_norm) @ W_p.T + W_pos.T``; x_norm is (L,) or (B, L)."""
    W_p, W_pos = ad.as_tensor(W_p), ad.as_tensor(W_pos)
    patches = patchify(np.asarray(x_norm, dtype=float), P, S)
    if W_p.shape[1] != P or W_pos.shape[1] != patches.shape[-2] or W_pos.shape[0] != W_p.shape[0]:
        raise ValueError(
            f"encode_patches: W_p {W_p.shape} / W_pos {W_pos.shape} do not fit {patches.shape[-2]} patches of length {P}"
        )
    return ad.add(ad.matmul(Tensor(patches), ad.transpose(W_p)), ad.transpose(W_pos))


def build_prefix(gated: Sequence[Optional[GatedPrimitive]], d_model: Optional[int] = None) -> np.ndarray:
    """Stack soft-weighted embeddings in KINDS order; absent kinds give zero rows."""
    by_kind = {g.kind: g for g in gated if g is not None}
    if d_model is None:
        if not by_kind:
            raise ValueError("d_model is required when no primitive is present")
        d_model = next(iter(by_kind.values())).h_tilde.shape[0]
    rows = [by_kind[k].h_tilde if k in by_kind else np.zeros(d_model) for k in KINDS]
    return np.stack(rows)


def attention(x: Tensor, Wq, bq, Wk, bk, Wv, bv, Wo, bo, n_heads: int, kv: Optional[Tensor] = None,
              mask_bias: Optional[np.ndarray] = None) -> tuple[Tensor, np.ndarray]:
    """Multi-head attention of ``x`` (B, T, d) over ``kv`` (default: x). Returns (output, weights)."""
    kv = x if kv is None else kv
    B, T, d = x.shape
    M = kv.shape[1]
    dh = d // n_heads

    def heads(t: Tensor, n: int) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, n, n_heads, dh)), (0, 2, 1, 3))

    q = heads(ad.add(ad.matmul(x, Wq), bq), T)
    k = heads(ad.add(ad.matmul(kv, Wk), bk), M)
    v = heads(ad.add(ad.matmul(kv, Wv), bv), M)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dh))
    weights = ad.softmax(scores, axis=-1, mask_bias=mask_bias)
    ctx = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (B, T, d))
    return ad.add(ad.matmul(ctx, Wo), bo), weights.data


def encoder_layer(z: Tensor, p: Mapping[str, Tensor], prefix: str, n_heads: int, dropout_rate: float,
                  rng, training: bool) -> tuple[Tensor, np.ndarray]:
    a = ad.layer_norm(z, p[prefix + "ln1.g"], p[prefix + "ln1.b"])
    att, weights = attention(
        a, *(p[prefix + "attn." + n] for n in ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo")), n_heads=n_heads
    )
    z = ad.add(z, ad.dropout(att, dropout_rate, rng, training))
    b = ad.layer_norm(z, p[prefix + "ln2.g"], p[prefix + "ln2.b"])
    f = ad.gelu(ad.add(ad.matmul(b, p[prefix + "ff.W1"]), p[prefix + "ff.b1"]))
    f = ad.add(ad.matmul(f, p[prefix + "ff.W2"]), p[prefix + "ff.b2"])
    return ad.add(z, ad.dropout(f, dropout_rate, rng, training)), weights


def encoder_forward(Z0, params: Mapping[str, Tensor], n_layers: int, n_heads: int, dropout_rate: float = 0.0,
                    rng=None, training: bool = False) -> tuple[Tensor, list[np.ndarray]]:
    """Pre-norm transformer encoder with full bidirectional attention and a final layer norm."""
    z = ad.as_tensor(Z0)
    squeeze = z.ndim == 2
    if squeeze:
        z = ad.reshape(z, (1,) + z.shape)
    all_weights = []
    for layer in range(n_layers):
        z, w = encoder_layer(z, params, f"layers.{layer}.", n_heads, dropout_rate, rng, training)
        all_weights.append(w[0] if squeeze else w)
    z = ad.layer_norm(z, params["ln_f.g"], params["ln_f.b"])
    if squeeze:
        z = ad.reshape(z, z.shape[1:])
    return z, all_weights


def head_forward(z_out: Tensor, params: Mapping[str, Tensor], prefix: str = "head.") -> Tensor:
    flat = ad.flatten(z_out, 1)
    hidden = ad.gelu(ad.add(ad.matmul(flat, params[prefix + "W1"]), params[prefix + "b1"]))
    return ad.add(ad.matmul(hidden, params[prefix + "W2"]), params[prefix + "b2"])


def predict(Z, stats: Union[NormStats, Sequence[NormStats]], params: Mapping[str, Tensor], N: int) -> np.ndarray:
    """Head over the last N rows of encoder output Z, then de-normalize with ``s * out + mu``."""
    Z = ad.as_tensor(Z)
    squeeze = Z.ndim == 2
    if squeeze:
        Z = ad.reshape(Z, (1,) + Z.shape)
        stats = [stats]
    out = head_forward(ad.getitem(Z, (slice(None), slice(Z.shape[1] - N, None))), params).data
    s = np.array([st.s for st in stats])[:, None]
    mu = np.array([st.mu for st in stats])[:, None]
    y = s * out + mu
    return y[0] if squeeze else y


def total_loss(y_hat, y, gates=None, gate_labels=None, lam: float = 0.1, gate_weight=None,
               gate_reduction: str = "sum") -> tuple[Tensor, Tensor, Optional[Tensor]]:
    """``L_fcst + lam * L_gate`` with ``L_fcst`` the per-element mean squared error.

    Returns (total, forecast term, gate term or None).
    """
    l_fcst = ad.mse_loss(y_hat, y)
    if gates is None or lam == 0 or (gate_weight is not None and not np.any(gate_weight)):
        return l_fcst, l_fcst, None
    l_gate = gate_loss(gates, gate_labels, weight=gate_weight)
    if gate_reduction == "mean":
        l_gate = ad.scale(l_gate, 1.0 / gates.shape[0])
    return ad.add(l_fcst, ad.scale(l_gate, lam)), l_fcst, l_gate


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class PrefixForecaster:
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        self.mode, self.dropped = parse_mode(cfg.mode)
        self.params: dict[str, Tensor] = {}
        self.tables: dict[PrimitiveKind, EmbeddingTable] = {}
        self.gates: dict[PrimitiveKind, GateParams] = {}
        self._build(np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])))
        self.last_attention: list[np.ndarray] = []

    # parameters

    def _add(self, name: str, data) -> Tensor:
        t = Tensor(np.asarray(data, dtype=float), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _build(self, rng) -> None:
        c = self.cfg
        d, N = c.d_model, c.N
        self._add("W_p", _uniform(rng, c.P, (d, c.P)))
        self._add("W_pos", rng.normal(0.0, 0.02, (d, N)))
        if c.K:
            W_m = self._add("gate.W_m", _uniform(rng, d, (d,)))
            for kind in KINDS:
                table = EmbeddingTable.init(kind, d, rng)
                self.params[table.rows.name] = table.rows
                self.tables[kind] = table
                gp = GateParams.init(kind, d, W_m)
                self.params[gp.w.name] = gp.w
                self.params[gp.b.name] = gp.b
                self.gates[kind] = gp
        for layer in range(c.n_layers):
            pre = f"layers.{layer}."
            self._add(pre + "ln1.g", np.ones(d))
            self._add(pre + "ln1.b", np.zeros(d))
            for n in ("q", "k", "v", "o"):
                self._add(pre + f"attn.W{n}", _uniform(rng, d, (d, d)))
                self._add(pre + f"attn.b{n}", np.zeros(d))
            self._add(pre + "ln2.g", np.ones(d))
            self._add(pre + "ln2.b", np.zeros(d))
            self._add(pre + "ff.W1", _uniform(rng, d, (d, c.ff_width)))
            self._add(pre + "ff.b1", np.zeros(c.ff_width))
            self._add(pre + "ff.W2", _uniform(rng, c.ff_width, (c.ff_width, d)))
            self._add(pre + "ff.b2", np.zeros(d))
        self._add("ln_f.g", np.ones(d))
        self._add("ln_f.b", np.zeros(d))
        self._add("head.W1", _uniform(rng, N * d, (N * d, c.ff_width)))
        self._add("head.b1", np.zeros(c.ff_width))
        self._add("head.W2", _uniform(rng, c.ff_width, (c.ff_width, c.H)))
        self._add("head.b2", np.zeros(c.H))

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ValueError("state dict keys do not match model parameters")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=float)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr

    # forward

    def _gate_values(self, inputs: PrimitiveInputs) -> tuple[list[Tensor], list[Tensor]]:
        """Per-kind embeddings (B, d) and raw gate confidences (B,)."""
        hs, gs = [], []
        for j, kind in enumerate(KINDS):
            h = ad.take_rows(self.tables[kind].rows, inputs.labels[:, j])
            hs.append(h)
            gs.append(gate_confidence(h, inputs.margins[:, j], self.gates[kind]))
        return hs, gs

    def prefix(self, inputs: PrimitiveInputs, gate_override=None) -> tuple[Optional[Tensor], Optional[Tensor]]:
        """Prefix rows (B, K, d) and gate values (B, K); (None, None) without TESS.

        ``gate_override`` (scalar or (B, K)) replaces the learned gates with constants.
        """
        if self.cfg.K == 0:
            return None, None
        B = len(inputs)
        hs, gs = self._gate_values(inputs)
        gate_tensor = ad.stack(gs, axis=1)
        if gate_override is not None:
            forced = np.broadcast_to(np.asarray(gate_override, dtype=float), (B, K_PRIMITIVES))
        elif self.mode == "no_gating":
            forced = np.ones((B, K_PRIMITIVES))
        else:
            forced = None
        rows = []
        for j, kind in enumerate(KINDS):
            active = inputs.present[:, j].astype(float)
            if self.dropped is kind:
                active = np.zeros(B)
            g = Tensor(forced[:, j]) if forced is not None else gs[j]
            coef = ad.mul(g, active)
            rows.append(ad.reshape(ad.mul(ad.reshape(coef, (B, 1)), hs[j]), (B, 1, self.cfg.d_model)))
        return ad.concat(rows, axis=1), gate_tensor

    def forward(self, X, inputs: Optional[PrimitiveInputs] = None, training: bool = False, rng=None,
                gate_override=None) -> tuple[Tensor, Optional[Tensor], np.ndarray, np.ndarray]:
        """Normalized-space head output (B, H), gates (B, K), and the (mu, s) used to de-normalize."""
        c = self.cfg
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != c.L:
            raise ValueError(f"window length {X.shape[1]} does not match L={c.L}")
        x_norm, mu, s = batch_normalize(X, c.eps_norm)
        E = encode_patches(x_norm, self.params["W_p"], self.params["W_pos"], c.P, c.S)
        gates = None
        if c.K:
            if inputs is None:
                raise ValueError("this model needs primitive inputs")
            if len(inputs) != X.shape[0]:
                raise ValueError(f"{len(inputs)} primitive rows for {X.shape[0]} windows")
            prefix, gates = self.prefix(inputs, gate_override)
            Z0 = ad.concat([prefix, E], axis=1)
        else:
            Z0 = E
        Z, self.last_attention = encoder_forward(
            Z0, self.params, c.n_layers, c.n_heads, c.dropout_rate, rng, training
        )
        out = head_forward(ad.getitem(Z, (slice(None), slice(c.K, None))), self.params)
        return out, gates, mu, s

    def predict_batch(self, X, inputs: Optional[PrimitiveInputs] = None, gate_override=None) -> np.ndarray:
        out, _, mu, s = self.forward(X, inputs, training=False, gate_override=gate_override)
        return s[:, None] * out.data + mu[:, None]

    def gate_values(self, inputs: PrimitiveInputs) -> np.ndarray:
        if self.cfg.K == 0:
            raise ValueError("model has no gates")
        _, gs = self._gate_values(inputs)
        return np.stack([g.data for g in gs], axis=1)

    def loss(self, X, Y, inputs: Optional[PrimitiveInputs], truth: Optional[np.ndarray], training: bool = False,
             rng=None) -> tuple[Tensor, Tensor, Optional[Tensor]]:
        out, gates, mu, s = self.forward(X, inputs, training=training, rng=rng)
        y_hat = ad.add(ad.mul(out, s[:, None]), mu[:, None])
        if gates is None or self.mode == "no_gating" or truth is None:
            return total_loss(y_hat, np.asarray(Y, dtype=float))
        ys = (inputs.labels == truth).astype(float)
        weight = inputs.present.astype(float)
        if self.dropped is not None:
            weight[:, KINDS.index(self.dropped)] = 0.0
        return total_loss(
            y_hat, np.asarray(Y, dtype=float), gates, ys, self.cfg.lam, weight, self.cfg.gate_loss_reduction
        )


def forecast(model: PrefixForecaster, window: Union[Window, np.ndarray],
             extraction_results: Union[None, PrimitiveVector, Mapping[PrimitiveKind, Extraction], PrimitiveInputs] = None,
             gate_override=None) -> np.ndarray:
    x = window.x_obs if isinstance(window, Window) else np.asarray(window, dtype=float)
    if x.shape[0] != model.cfg.L:
        raise ValueError(f"window length {x.shape[0]} does not match L={model.cfg.L}")
    if isinstance(extraction_results, PrimitiveInputs) or extraction_results is None:
        inputs = extraction_results
    elif isinstance(extraction_results, PrimitiveVector):
        inputs = PrimitiveInputs.from_vectors([extraction_results])
    else:
        inputs = PrimitiveInputs.from_extractions([extraction_results])
    if inputs is None and model.cfg.K:
        inputs = PrimitiveInputs.from_extractions([None])
    return model.predict_batch(x[None, :], inputs, gate_override)[0]


# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    patience: int = 10
    seed: int = 0


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def column(self, key: str) -> list[float]:
        return [e[key] for e in self.epochs]


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    inputs: Optional[PrimitiveInputs] = None
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if self.inputs is not None and len(self.inputs) != self.X.shape[0]:
            raise ValueError(f"misaligned extractions: {len(self.inputs)} rows for {self.X.shape[0]} windows")
        if self.truth is not None and self.truth.shape[0] != self.X.shape[0]:
            raise ValueError("misaligned ground-truth labels")

    def __len__(self) -> int:
        return self.X.shape[0]

    def batch(self, idx) -> "Dataset":
        return Dataset(
            self.X[idx],
            self.Y[idx],
            None if self.inputs is None else self.inputs.subset(idx),
            None if self.truth is None else self.truth[idx],
        )

    @classmethod
    def from_windows(cls, windows: Sequence[Window], inputs: Optional[PrimitiveInputs] = None,
                     thresholds: Optional[ThresholdSet] = None) -> "Dataset":
        if not windows:
            raise ValueError("empty dataset")
        if any(w.y_fut is None for w in windows):
            raise ValueError("every training window needs a forecast segment")
        truth = truth_indices(windows, thresholds) if thresholds is not None else None
        return cls(np.stack([w.x_obs for w in windows]), np.stack([w.y_fut for w in windows]), inputs, truth)


def evaluate_loss(model: PrefixForecaster, data: Dataset, batch_size: int = 256) -> dict:
    totals = {"loss": 0.0, "l_fcst": 0.0, "l_gate": 0.0}
    n = len(data)
    for start in range(0, n, batch_size):
        b = data.batch(slice(start, start + batch_size))
        total, l_f, l_g = model.loss(b.X, b.Y, b.inputs, b.truth)
        w = len(b) / n
        totals["loss"] += total.item() * w
        totals["l_fcst"] += l_f.item() * w
        totals["l_gate"] += (l_g.item() if l_g is not None else 0.0) * w
    return totals


def fit_loop(params: Mapping[str, Tensor], n_train: int,
             batch_loss: Callable[[np.ndarray, np.random.Generator], tuple[Tensor, Tensor, Optional[Tensor]]],
             val_loss: Callable[[], float], train_cfg: TrainConfig, config_snapshot: dict) -> TrainReport:
    """Shuffled mini-batch AdamW with early stopping; restores the best-validation parameters."""
    seeds = np.random.SeedSequence([train_cfg.seed, 2]).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    opt = AdamW(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    report = TrainReport(seed=train_cfg.seed, config=config_snapshot)
    best_state = {k: p.data.copy() for k, p in params.items()}
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = shuffle_rng.permutation(n_train)
        sums = np.zeros(3)
        for start in range(0, n_train, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            opt.zero_grad()
            total, l_f, l_g = batch_loss(idx, dropout_rng)
            ad.backward(total)
            opt.step()
            sums += len(idx) * np.array([total.item(), l_f.item(), 0.0 if l_g is None else l_g.item()])
        sums /= n_train
        val = val_loss()
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
            stale = 0
        else:
            stale += 1
        report.epochs.append(
            {
                "epoch": epoch,
                "loss": float(sums[0]),
                "l_fcst": float(sums[1]),
                "l_gate": float(sums[2]),
                "val_loss": float(val),
                "best_val_loss": report.best_val_loss,
                "wall_time_s": time.perf_counter() - t0,
            }
        )
        log.debug("epoch %d loss %.5f val %.5f", epoch, sums[0], val)
        if stale >= train_cfg.patience:
            break
    for k, p in params.items():
        p.data[...] = best_state[k]
    report.wall_time_s = time.perf_counter() - t0
    return report


def train(train_data: Dataset, cfg: ModelConfig = ModelConfig(), train_cfg: TrainConfig = TrainConfig(),
          val_data: Optional[Dataset] = None,
          model: Optional[PrefixForecaster] = None) -> tuple[PrefixForecaster, TrainReport]:
    """Fit a forecaster on windows with aligned primitive inputs and ground-truth labels."""
    if len(train_data) == 0:
        raise ValueError("empty training set")
    if cfg.K and train_data.inputs is None:
        raise ValueError("model mode needs primitive inputs aligned with the training windows")
    if train_data.X.shape[1] != cfg.L or train_data.Y.shape[1] != cfg.H:
        raise ValueError(
            f"dataset shapes (L={train_data.X.shape[1]}, H={train_data.Y.shape[1]}) do not match config"
        )
    model = model or PrefixForecaster(cfg)
    monitor = val_data if val_data is not None else train_data

    def batch_loss(idx, rng):
        b = train_data.batch(idx)
        return model.loss(b.X, b.Y, b.inputs, b.truth, training=True, rng=rng)

    report = fit_loop(
        model.params,
        len(train_data),
        batch_loss,
        lambda: evaluate_loss(model, monitor)["loss"],
        train_cfg,
        {"model": asdict(cfg), "train": asdict(train_cfg)},
    )
    return model, report
