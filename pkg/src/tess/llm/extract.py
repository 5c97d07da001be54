"""Text -> primitive predictions with calibrated categorical distributions."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ..primitives import KINDS, PrimitiveKind, PrimitiveLabel
from .backends import BackendError, CompletionBackend, ModeUnsupportedError
from .cache import ResponseCache, cache_key
from .prompt import PromptSpec, ResponseParseError, build_prompt, parse_structured_response

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelScores:
    kind: PrimitiveKind
    scores: Mapping[str, float]

    def __post_init__(self):
        if set(self.scores) != set(self.kind.candidates):
            raise ValueError(f"scores must cover exactly the {self.kind.value} candidates")
        if not all(math.isfinite(v) for v in self.scores.values()):
            raise ValueError("scores must be finite")

    def vector(self) -> np.ndarray:
        return np.array([self.scores[v] for v in self.kind.candidates], dtype=float)


@dataclass(frozen=True)
class LabelDistribution:
    kind: PrimitiveKind
    probs: Mapping[str, float]
    temperature: float = 1.0

    def vector(self) -> np.ndarray:
        return np.array([self.probs[v] for v in self.kind.candidates], dtype=float)


@dataclass(frozen=True)
class ExtractionResult:
    kind: PrimitiveKind
    predicted: PrimitiveLabel
    distribution: LabelDistribution
    margin_m: float
    backend_id: str
    cached: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "predicted": self.predicted.value,
            "probs": dict(self.distribution.probs),
            "temperature": self.distribution.temperature,
            "margin": self.margin_m,
            "backend_id": self.backend_id,
            "cached": self.cached,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionResult":
        kind = PrimitiveKind(d["kind"])
        return cls(
            kind=kind,
            predicted=PrimitiveLabel(kind, d["predicted"]),
            distribution=LabelDistribution(kind, dict(d["probs"]), d.get("temperature", 1.0)),
            margin_m=float(d["margin"]),
            backend_id=d.get("backend_id", ""),
            cached=bool(d.get("cached", False)),
        )


@dataclass(frozen=True)
class MissingExtraction:
    """Marker for a primitive whose extraction failed; it contributes a zero prefix row."""

    kind: PrimitiveKind
    error: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "missing": True, "error": self.error}


Extraction = Union[ExtractionResult, MissingExtraction]


@dataclass(frozen=True)
class ExtractionConfig:
    scoring_mode: str = "logprob"
    temperature: float = 1.0
    delta_parse: float = 0.05
    max_parallel_requests: int = 4

    def __post_init__(self):
        if self.scoring_mode not in ("logprob", "parse"):
            raise ValueError(f"unknown scoring_mode {self.scoring_mode!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.delta_parse < 1:
            raise ValueError("delta_parse must lie in (0, 1)")


def temper_softmax(scores: LabelScores, T: float = 1.0) -> LabelDistribution:
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = scores.vector() / T
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    return LabelDistribution(scores.kind, dict(zip(scores.kind.candidates, p.tolist())), T)


def _ranked(dist: LabelDistribution) -> list[str]:
    # stable sort keeps template order on exact ties
    cands = dist.kind.candidates
    return sorted(cands, key=lambda v: -dist.probs[v])


def predict_label(dist: LabelDistribution) -> PrimitiveLabel:
    return PrimitiveLabel(dist.kind, _ranked(dist)[0])


def margin(dist: LabelDistribution) -> float:
    ranked = _ranked(dist)
    if len(ranked) < 2:
        raise ValueError("margin needs at least two candidates")
    return max(0.0, math.log(dist.probs[ranked[0]]) - math.log(dist.probs[ranked[1]]))


def parse_distribution(label: PrimitiveLabel, delta_parse: float = 0.05) -> LabelDistribution:
    """Peaked distribution for a parsed label: 1 - delta on it, the rest uniform."""
    others = len(label.kind.candidates) - 1
    probs = {v: (1.0 - delta_parse if v == label.value else delta_parse / others) for v in label.kind.candidates}
    return LabelDistribution(label.kind, probs, 1.0)


class _Calls:
    """Cache-aware backend access that tracks whether every call was a cache hit."""

    def __init__(self, backend: CompletionBackend, cache: Optional[ResponseCache], mode: str):
        self.backend = backend
        self.cache = cache
        self.mode = mode
        self.all_cached = True

    def _cached(self, prompt: str, fn):
        if self.cache is None:
            self.all_cached = False
            return fn()
        key = cache_key(self.backend.model_name, prompt, self.mode)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.all_cached = False
        value = fn()
        self.cache.put(key, value)
        return value

    def complete(self, prompt: str) -> str:
        return self._cached(prompt, lambda: self.backend.complete(prompt))

    def logprobs(self, context: str, continuation: str) -> list[float]:
        return self._cached(
            context + continuation, lambda: self.backend.continuation_logprobs(context, continuation)
        )


def scoring_context(prompt: str, kind: PrimitiveKind, answered: Optional[Mapping[PrimitiveKind, str]] = None) -> str:
    """Prompt followed by the already answered output lines and ``"<Key>: "`` for ``kind``."""
    lines = []
    for k in KINDS:
        if k is kind:
            break
        if answered and k in answered:
            lines.append(f"{k.line_key}: {answered[k]}")
    lines.append(f"{kind.line_key}: ")
    return prompt + "\n\n" + "\n".join(lines)


def score_candidates(
    backend: CompletionBackend,
    prompt: str,
    kind: PrimitiveKind,
    cache: Optional[ResponseCache] = None,
    answered: Optional[Mapping[PrimitiveKind, str]] = None,
    _calls: Optional[_Calls] = None,
) -> LabelScores:
    if not getattr(backend, "supports_logprobs", False):
        raise ModeUnsupportedError(
            f"backend {getattr(backend, 'backend_id', backend)!r} does not expose token log-probabilities; "
            "use scoring_mode='parse'"
        )
    calls = _calls or _Calls(backend, cache, "logprob")
    context = scoring_context(prompt, kind, answered)
    scores = {v: float(sum(calls.logprobs(context, v))) for v in kind.candidates}
    return LabelScores(kind, scores)


def _result(dist: LabelDistribution, backend_id: str, cached: bool) -> ExtractionResult:
    return ExtractionResult(dist.kind, predict_label(dist), dist, margin(dist), backend_id, cached)


def extract(
    backend: CompletionBackend,
    cache: Optional[ResponseCache],
    text: str,
    role: str,
    domain_context: str,
    cfg: ExtractionConfig = ExtractionConfig(),
) -> dict[PrimitiveKind, Extraction]:
    prompt = build_prompt(PromptSpec(role, domain_context, text))
    backend_id = getattr(backend, "backend_id", "unknown")
    out: dict[PrimitiveKind, Extraction] = {}
    if cfg.scoring_mode == "parse":
        calls = _Calls(backend, cache, "parse")
        try:
            labels = parse_structured_response(calls.complete(prompt))
        except (BackendError, ResponseParseError) as exc:
            log.warning("extraction failed: %s", exc)
            return {k: MissingExtraction(k, str(exc)) for k in KINDS}
        for k in KINDS:
            out[k] = _result(parse_distribution(labels[k], cfg.delta_parse), backend_id, calls.all_cached)
        return out

    answered: dict[PrimitiveKind, str] = {}
    for k in KINDS:
        calls = _Calls(backend, cache, "logprob")
        try:
            scores = score_candidates(backend, prompt, k, answered=answered, _calls=calls)
        except ModeUnsupportedError:
            raise
        except BackendError as exc:
            log.warning("extraction of %s failed: %s", k.value, exc)
            out[k] = MissingExtraction(k, str(exc))
            continue
        res = _result(temper_softmax(scores, cfg.temperature), backend_id, calls.all_cached)
        answered[k] = res.predicted.value
        out[k] = res
    return out


def extract_batch(
    backend: CompletionBackend,
    cache: Optional[ResponseCache],
    texts: Sequence[str],
    role: str,
    domain_context: str,
    cfg: ExtractionConfig = ExtractionConfig(),
) -> list[Optional[dict[PrimitiveKind, Extraction]]]:
    """Extract for many texts concurrently; empty texts map to ``None`` (no extraction)."""

    def one(text: str):
        if not text.strip():
            return None
        return extract(backend, cache, text, role, domain_context, cfg)

    if cfg.max_parallel_requests <= 1:
        return [one(t) for t in texts]
    with ThreadPoolExecutor(max_workers=cfg.max_parallel_requests) as pool:
        return list(pool.map(one, texts))
