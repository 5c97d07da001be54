from __future__ import annotations

import re
from dataclasses import dataclass

from ..primitives import KINDS, PrimitiveKind, PrimitiveLabel

_TEMPLATE = """You are a professional {role}.
Your task is to analyze the provided textual information and
infer temporal evolution patterns that may impact future time series behavior.

Textual Input: {text_content}
Domain Context: {domain_context}

Instructions:
Based on the textual content provided below, analyze and classify
the following four temporal evolution primitives:

1. Mean Shift - Infer the direction and magnitude of anticipated
   level changes:
   {mean_shift}

2. Volatility - Infer the anticipated changes in volatility regime:
   {volatility}

3. Shape - Infer the dominant trend morphology pattern over the
   forecast horizon:
   {shape}

4. Lag and Decay - Infer the temporal localization and persistence
   of the impact:
   {lag}

You MUST output in the following EXACT format with no extra text:

Mean Shift: {mean_shift}
Volatility: {volatility}
Shape: {shape}
Lag: {lag}

Provide your analysis in the exact format specified above."""


def candidate_list(kind: PrimitiveKind) -> str:
    return "<" + " | ".join(kind.candidates) + ">"


@dataclass(frozen=True)
class PromptSpec:
    role_description: str
    domain_context: str
    text_content: str

    def __post_init__(self):
        for name in ("role_description", "domain_context", "text_content"):
            if not getattr(self, name).strip():
                raise ValueError(f"PromptSpec.{name} must be non-empty")


def build_prompt(spec: PromptSpec) -> str:
    return _TEMPLATE.format(
        role=spec.role_description,
        text_content=spec.text_content,
        domain_context=spec.domain_context,
        **{k.value: candidate_list(k) for k in KINDS},
    )


def render_response(labels: dict[PrimitiveKind, PrimitiveLabel]) -> str:
    """Render a well-formed structured response for the four labels."""
    return "\n".join(f"{k.line_key}: {labels[k].value}" for k in KINDS)


class ResponseParseError(ValueError):
    pass


_KEYS = {k.line_key.lower(): k for k in KINDS}
_LINE = re.compile(r"^\s*([A-Za-z][A-Za-z ]*?)\s*:\s*(.*?)\s*$")


def parse_structured_response(response_text: str) -> dict[PrimitiveKind, PrimitiveLabel]:
    found: dict[PrimitiveKind, PrimitiveLabel] = {}
    for lineno, line in enumerate(response_text.splitlines(), start=1):
        match = _LINE.match(line)
        if not match:
            continue
        kind = _KEYS.get(match.group(1).lower())
        if kind is None:
            continue
        if kind in found:
            raise ResponseParseError(f"line {lineno}: duplicate key {kind.line_key!r}: {line.strip()!r}")
        value = match.group(2).lower()
        if value not in kind.candidates:
            raise ResponseParseError(
                f"line {lineno}: out-of-domain value {match.group(2)!r} for {kind.line_key!r}: {line.strip()!r}"
            )
        found[kind] = PrimitiveLabel(kind, value)
    missing = [k.line_key for k in KINDS if k not in found]
    if missing:
        raise ResponseParseError(f"missing key(s): {', '.join(missing)}")
    return {k: found[k] for k in KINDS}
