"""Direct text-series fusion baseline used for attention diagnostics.

Patch states attend once over learned (hashed) token embeddings; the
cross-attention weights are exposed so the focus ratio on signal versus
redundant tokens can be measured.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .forecaster import TrainConfig, TrainReport, attention, encode_patches, fit_loop
from .series import EPS_NORM, PatchGrid, batch_normalize

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
MASK_BIAS = -1e9


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation (punctuation marks become tokens)."""
    return _TOKEN_RE.findall(text.lower())


def token_id(token: str, vocab_size: int = 4096) -> int:
    return zlib.crc32(token.lower().encode("utf-8")) % vocab_size


@dataclass(frozen=True)
class BaselineConfig:
    L: int = 48
    H: int = 16
    P: int = 8
    S: int = 8
    d_model: int = 32
    n_heads: int = 1
    ff_width: int = 64
    vocab_size: int = 4096
    n_exog: int = 0
    dropout_rate: float = 0.0
    seed: int = 0

    @property
    def N(self) -> int:
        return PatchGrid.for_length(self.L, self.P, self.S).N


class BaselineFusionModel:
    def __init__(self, cfg: BaselineConfig = BaselineConfig()):
        if cfg.d_model % cfg.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        d, N = cfg.d_model, cfg.N
        self.params: dict[str, Tensor] = {}

        def add(name, data):
            self.params[name] = Tensor(np.asarray(data, dtype=float), requires_grad=True, name=name)

        u = lambda fan, shape: rng.uniform(-1 / np.sqrt(fan), 1 / np.sqrt(fan), size=shape)
        add("token_embed", rng.normal(0.0, 1.0, (cfg.vocab_size, d)))
        add("W_p", u(cfg.P, (d, cfg.P)))
        add("W_pos", rng.normal(0.0, 0.02, (d, N)))
        for n in ("q", "k", "v", "o"):
            add(f"xattn.W{n}", u(d, (d, d)))
            add(f"xattn.b{n}", np.zeros(d))
        add("head.W1", u(N * d + cfg.n_exog, (N * d + cfg.n_exog, cfg.ff_width)))
        add("head.b1", np.zeros(cfg.ff_width))
        add("head.W2", u(cfg.ff_width, (cfg.ff_width, cfg.H)))
        add("head.b2", np.zeros(cfg.H))

    def _token_batch(self, tokens: Sequence[Sequence]) -> tuple[np.ndarray, np.ndarray]:
        M = max(len(t) for t in tokens)
        ids = np.zeros((len(tokens), M), dtype=int)
        mask = np.zeros((len(tokens), M), dtype=bool)
        for i, toks in enumerate(tokens):
            row = [t if isinstance(t, (int, np.integer)) else token_id(t, self.cfg.vocab_size) for t in toks]
            ids[i, : len(row)] = row
            mask[i, : len(row)] = True
        return ids, mask

    def forward(self, X, tokens: Optional[Sequence[Sequence]] = None, exog=None, use_text: bool = True,
                training: bool = False, rng=None) -> tuple[Tensor, Optional[np.ndarray], np.ndarray, np.ndarray]:
        """Normalized-space output (B, H), head-averaged attention (B, N, M) or None, mu, s."""
        c = self.cfg
        X = np.atleast_2d(np.asarray(X, dtype=float))
        x_norm, mu, s = batch_normalize(X, EPS_NORM)
        p = self.params
        E = encode_patches(x_norm, p["W_p"], p["W_pos"], c.P, c.S)
        alpha = None
        Z = E
        if use_text and tokens is not None and any(len(t) for t in tokens):
            ids, mask = self._token_batch(tokens)
            T = ad.take_rows(p["token_embed"], ids)
            bias = np.where(mask, 0.0, MASK_BIAS)[:, None, None, :]
            out, w = attention(
                E, *(p["xattn." + n] for n in ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo")),
                n_heads=c.n_heads, kv=T, mask_bias=bias,
            )
            # rows with no tokens contribute nothing
            has_text = mask.any(axis=1).astype(float)[:, None, None]
            Z = ad.add(E, ad.dropout(ad.mul(out, has_text), c.dropout_rate, rng, training))
            alpha = w.mean(axis=1)
        flat = ad.flatten(Z, 1)
        if c.n_exog:
            ex = np.zeros((X.shape[0], c.n_exog)) if exog is None else np.asarray(exog, dtype=float)
            flat = ad.concat([flat, Tensor(ex.reshape(X.shape[0], c.n_exog))], axis=1)
        hidden = ad.gelu(ad.add(ad.matmul(flat, p["head.W1"]), p["head.b1"]))
        out = ad.add(ad.matmul(hidden, p["head.W2"]), p["head.b2"])
        return out, alpha, mu, s

    def predict_batch(self, X, tokens=None, exog=None, use_text: bool = True) -> tuple[np.ndarray, Optional[np.ndarray]]:
        out, alpha, mu, s = self.forward(X, tokens, exog, use_text)
        return s[:, None] * out.data + mu[:, None], alpha

    def loss(self, X, Y, tokens=None, exog=None, training: bool = False, rng=None):
        out, _, mu, s = self.forward(X, tokens, exog, training=training, rng=rng)
        l = ad.mse_loss(ad.add(ad.mul(out, s[:, None]), mu[:, None]), np.asarray(Y, dtype=float))
        return l, l, None


def baseline_fusion_forward(model: BaselineFusionModel, x, token_ids: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Single-window forward: (forecast of length H, attention weights N x M)."""
    if len(token_ids) == 0:
        raise ValueError("baseline_fusion_forward needs a non-empty token list")
    y, alpha = model.predict_batch(np.asarray(x, dtype=float)[None, :], [list(token_ids)])
    return y[0], alpha[0]


def train_baseline(X, Y, tokens: Optional[Sequence[Sequence]], cfg: BaselineConfig, train_cfg: TrainConfig,
                   exog=None, val: Optional[tuple] = None) -> tuple[BaselineFusionModel, TrainReport]:
    """Train on windows X/Y with per-window token lists (or None) and optional exogenous scalars.

    ``val`` is an optional (X, Y, tokens, exog) tuple used for early stopping.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    model = BaselineFusionModel(cfg)
    exog = None if exog is None else np.asarray(exog, dtype=float)

    def pick(seq, idx):
        return None if seq is None else [seq[i] for i in idx]

    def batch_loss(idx, rng):
        return model.loss(X[idx], Y[idx], pick(tokens, idx), None if exog is None else exog[idx], True, rng)

    def val_loss():
        vX, vY, vT, vE = val if val is not None else (X, Y, tokens, exog)
        return model.loss(vX, vY, vT, vE)[0].item()

    report = fit_loop(model.params, X.shape[0], batch_loss, val_loss, train_cfg,
                      {"baseline": asdict(cfg), "train": asdict(train_cfg)})
    return model, report
