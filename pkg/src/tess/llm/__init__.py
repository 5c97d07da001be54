from .backends import (
    BackendError,
    CompletionBackend,
    EndpointConfig,
    HTTPBackend,
    KeywordMockBackend,
    ModeUnsupportedError,
)
from .cache import ResponseCache, cache_key
from .extract import (
    ExtractionConfig,
    ExtractionResult,
    LabelDistribution,
    LabelScores,
    MissingExtraction,
    extract,
    extract_batch,
    margin,
    parse_distribution,
    predict_label,
    score_candidates,
    temper_softmax,
)
from .prompt import PromptSpec, ResponseParseError, build_prompt, parse_structured_response, render_response

__all__ = [
    "BackendError",
    "build_prompt",
    "cache_key",
    "CompletionBackend",
    "EndpointConfig",
    "extract",
    "extract_batch",
    "ExtractionConfig",
    "ExtractionResult",
    "HTTPBackend",
    "KeywordMockBackend",
    "LabelDistribution",
    "LabelScores",
    "margin",
    "MissingExtraction",
    "ModeUnsupportedError",
    "parse_distribution",
    "parse_structured_response",
    "predict_label",
    "PromptSpec",
    "render_response",
    "ResponseCache",
    "ResponseParseError",
    "score_candidates",
    "temper_softmax",
]
