"""Completion backends: an OpenAI-compatible HTTP client and a deterministic mock."""
from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol

import httpx

from ..primitives import KINDS, PrimitiveKind, PrimitiveLabel
from .prompt import render_response


class BackendError(RuntimeError):
    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class ModeUnsupportedError(RuntimeError):
    """The backend cannot report token log-probabilities; use scoring_mode='parse'."""


class CompletionBackend(Protocol):
    backend_id: str
    model_name: str
    supports_logprobs: bool

    def complete(self, prompt: str) -> str: ...

    def continuation_logprobs(self, context: str, continuation: str) -> list[float]: ...


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "local-model"
    api_key_env_var: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    max_parallel_requests: int = 4
    scoring_mode: str = "parse"
    backoff_base_s: float = 0.5

    def __post_init__(self):
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be positive")
        if self.max_parallel_requests < 1:
            raise ValueError("max_parallel_requests must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.scoring_mode not in ("logprob", "parse"):
            raise ValueError(f"scoring_mode must be 'logprob' or 'parse', got {self.scoring_mode!r}")


class HTTPBackend:
    """Chat-completions client for parse mode; echo-scored completions for logprob mode.

    Logprob scoring posts ``prompt = context + continuation`` to ``/completions``
    with ``echo=true, max_tokens=0, logprobs=1`` and sums the log-probabilities
    of the tokens whose text offset falls inside the continuation.
    """

    supports_logprobs = True

    def __init__(self, cfg: EndpointConfig, client: Optional[httpx.Client] = None, sleep=time.sleep):
        self.cfg = cfg
        self.model_name = cfg.model_name
        self.backend_id = f"http:{cfg.model_name}@{cfg.base_url}"
        self._client = client or httpx.Client(timeout=cfg.timeout_s)
        self._sleep = sleep
        self.request_count = 0

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.cfg.api_key_env_var)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _post(self, path: str, body: dict) -> dict:
        url = self.cfg.base_url.rstrip("/") + path
        attempts = 0
        delay = self.cfg.backoff_base_s
        while True:
            attempts += 1
            self.request_count += 1
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                err = f"transport failure posting to {url}: {exc}"
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code in (404, 501) and path == "/completions":
                    raise ModeUnsupportedError(
                        f"{url} returned {resp.status_code}; this endpoint cannot score continuations, use scoring_mode='parse'"
                    )
                if 400 <= resp.status_code < 500 and resp.status_code != 429:
                    raise BackendError(f"{url} returned {resp.status_code}: {resp.text[:200]}", attempts)
                err = f"{url} returned {resp.status_code}"
            if attempts > self.cfg.max_retries:
                raise BackendError(err, attempts)
            self._sleep(delay)
            delay *= 2

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        data = self._post("/chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError("malformed chat completion response") from None

    def continuation_logprobs(self, context: str, continuation: str) -> list[float]:
        body = {
            "model": self.cfg.model_name,
            "prompt": context + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 1,
            "temperature": 0,
        }
        data = self._post("/completions", body)
        try:
            lp = data["choices"][0]["logprobs"]
            tokens = lp["token_logprobs"]
            offsets = lp["text_offset"]
        except (KeyError, IndexError, TypeError):
            raise ModeUnsupportedError(
                "backend response lacks token log-probabilities; use scoring_mode='parse'"
            ) from None
        start = len(context)
        picked = [float(t) for t, off in zip(tokens, offsets) if off >= start and t is not None]
        if not picked:
            raise BackendError("no continuation tokens were scored")
        return picked


def _unit_hash(*parts: str) -> float:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") / 2.0**64


_TEXT_RE = re.compile(r"Textual Input:(.*?)\nDomain Context:", re.S)
_LINE_PREFIX_RE = re.compile(r"(Mean Shift|Volatility|Shape|Lag): $")


def _split_label_tokens(label: str) -> list[str]:
    return [t for t in re.split(r"(-)", label) if t]


@dataclass
class KeywordMockBackend:
    """Deterministic offline stand-in for an LLM.

    Reads the text embedded in the prompt, looks up phrases from ``lexicon``
    (phrase -> (kind, label)) and scores that label high. With probability
    ``error_rate`` (hashed from text and kind, so reproducible) a different label
    wins by a narrow margin, mimicking an unsure wrong extraction.
    """

    lexicon: Mapping[str, tuple[str, str]] = field(default_factory=dict)
    error_rate: float = 0.0
    seed: int = 0
    model_name: str = "mock-keyword"
    supports_logprobs: bool = True
    calls: int = 0

    def __post_init__(self):
        self.backend_id = f"mock:{self.model_name}:seed{self.seed}"
        self._lock = threading.Lock()
        self._phrases = sorted(self.lexicon.items(), key=lambda kv: -len(kv[0]))

    def _count(self) -> None:
        with self._lock:
            self.calls += 1

    def _text_of(self, prompt: str) -> str:
        match = _TEXT_RE.search(prompt)
        return (match.group(1) if match else prompt).strip().lower()

    def scores(self, text: str, kind: PrimitiveKind) -> dict[str, float]:
        hint = None
        for phrase, (k, label) in self._phrases:
            if k == kind.value and phrase in text:
                hint = label
                break
        out = {}
        for v in kind.candidates:
            out[v] = -4.0 - _unit_hash(str(self.seed), text, kind.value, v)
        if hint is None:
            return out
        wrong = _unit_hash(str(self.seed), text, kind.value, "err") < self.error_rate
        if wrong:
            others = [v for v in kind.candidates if v != hint]
            alt = others[int(_unit_hash(str(self.seed), text, kind.value, "alt") * len(others))]
            out[alt] = -0.9 - 0.2 * _unit_hash(str(self.seed), text, "alt-score")
            out[hint] = -1.2 - 0.2 * _unit_hash(str(self.seed), text, "hint-score")
        else:
            out[hint] = -0.05 - 0.1 * _unit_hash(str(self.seed), text, kind.value, "hint")
        return out

    def complete(self, prompt: str) -> str:
        self._count()
        text = self._text_of(prompt)
        labels = {}
        for kind in KINDS:
            s = self.scores(text, kind)
            best = max(kind.candidates, key=lambda v: (s[v], -kind.index_of(v)))
            labels[kind] = PrimitiveLabel(kind, best)
        return render_response(labels)

    def continuation_logprobs(self, context: str, continuation: str) -> list[float]:
        self._count()
        if not self.supports_logprobs:
            raise ModeUnsupportedError("mock configured without log-probabilities; use scoring_mode='parse'")
        match = _LINE_PREFIX_RE.search(context)
        if match is None:
            raise BackendError("mock could not locate the output-line prefix in the scoring context")
        kind = next(k for k in KINDS if k.line_key == match.group(1))
        total = self.scores(self._text_of(context), kind)[continuation]
        tokens = _split_label_tokens(continuation)
        return [total / len(tokens)] * len(tokens)
