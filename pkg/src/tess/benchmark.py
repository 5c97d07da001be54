"""Semi-synthetic benchmark: regime-switching series paired with annotated text.

Each sample's text describes the true primitives of its forecast segment with
one templated sentence per primitive, buried among distractor sentences. Token
provenance is recorded while rendering: bracketed spans in a template are the
signal tokens, everything else (function words, distractors) is redundant.
"""
from __future__ import annotations

import enum
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .baseline import tokenize
from .primitives import (
    KINDS,
    PrimitiveKind,
    PrimitiveStats,
    PrimitiveVector,
    ThresholdConfig,
    ThresholdSet,
    classify_stats,
    compute_stats,
    fit_thresholds,
)
from .series import TimeSeries, Window, slide_windows

ARCHETYPES = ("ascend", "descend", "peak", "trough", "oscillate", "flat")

# bracketed spans carry the signal
TEMPLATE_BANK: dict[PrimitiveKind, dict[str, tuple[str, ...]]] = {
    PrimitiveKind.MEAN_SHIFT: {
        "strong-rise": ("Analysts expect prices to [surge sharply] from here .",
                        "Traders anticipate a [dramatic jump] in the average level ."),
        "mild-rise": ("The outlook points to a [modest gain] in coming sessions .",
                      "Prices are expected to [edge higher] over the horizon ."),
        "stable": ("Levels should [hold steady] near current values .",
                   "Observers see the average [staying flat] ."),
        "mild-drop": ("Prices may [slip slightly] in the days ahead .",
                      "A [modest decline] in the level is likely ."),
        "strong-drop": ("A [steep plunge] in prices is expected .",
                        "Analysts warn of a [dramatic collapse] in the average level ."),
    },
    PrimitiveKind.VOLATILITY: {
        "surge": ("Trading is set to turn [wildly erratic] .",
                  "Swings should become [extremely violent] ."),
        "rise": ("Price swings are likely to [grow somewhat larger] .",
                 "Expect [choppier trading] than before ."),
        "stable": ("Swings should remain [about as usual] .",
                   "[Typical fluctuation] is expected to persist ."),
        "fall": ("Fluctuations should [ease a little] .",
                 "Trading may turn [somewhat quieter] ."),
        "calm": ("Markets are expected to become [almost motionless] .",
                 "Swings should [die down completely] ."),
    },
    PrimitiveKind.SHAPE: {
        "ascend": ("The path should [climb steadily throughout] .",
                   "A [persistent upward drift] is anticipated ."),
        "descend": ("The path should [fall steadily throughout] .",
                    "A [persistent downward drift] is anticipated ."),
        "peak": ("Values may [rise first and then retreat] .",
                 "An [interim top followed by a pullback] is expected ."),
        "trough": ("Values may [dip first and then recover] .",
                   "An [interim bottom followed by a rebound] is expected ."),
        "oscillate": ("The path should [zigzag back and forth] .",
                      "Expect [repeated reversals] along the way ."),
    },
    PrimitiveKind.LAG: {
        "early-fade": ("The effect should [hit immediately and fade fast] .",
                       "An [instant but short-lived] reaction is likely ."),
        "early-persist": ("The impact should [arrive immediately and linger] .",
                          "An [instant and lasting] reaction is likely ."),
        "mid-fade": ("The effect may [appear midway and fade] .",
                     "A [brief midway blip] is expected ."),
        "mid-persist": ("The impact may [appear midway and persist] .",
                        "A [midway shift that lasts] is expected ."),
        "late": ("Any reaction should [come only near the end] .",
                 "Effects will [surface late] in the period ."),
        "diffuse": ("The influence will be [spread evenly across the period] .",
                    "Impact should be [gradual and diffuse] ."),
    },
}

DISTRACTOR_BANK: tuple[str, ...] = (
    "The company held its annual meeting in the capital .",
    "Several executives attended a conference on supply chains .",
    "The weather in the region was mild this week .",
    "A new office building opened downtown on Monday .",
    "Officials discussed a range of regulatory topics .",
    "The report was released after the close of business .",
    "Commentators reviewed the history of the sector .",
    "Local media covered the event in detail .",
    "The board approved a routine change to its bylaws .",
    "Industry groups published their quarterly newsletter .",
    "Several analysts attended the briefing in person .",
    "The announcement followed months of internal planning .",
    "Attendance at the trade fair matched last year .",
    "The firm appointed a new head of communications .",
    "Observers noted the long tradition of the market .",
    "Staff relocated to a larger facility nearby .",
    "The press release contained few surprises .",
    "A panel discussed technology trends in general terms .",
    "The statement thanked partners for their support .",
    "Weekend traffic in the city was typical .",
)

_SPAN = re.compile(r"\[([^\]]+)\]")


def render_template(template: str) -> tuple[list[str], list[bool]]:
    """Tokens of a template and, per token, whether it lies in a bracketed signal span."""
    tokens: list[str] = []
    flags: list[bool] = []
    pos = 0
    for m in _SPAN.finditer(template):
        for t in tokenize(template[pos : m.start()]):
            tokens.append(t)
            flags.append(False)
        for t in tokenize(m.group(1)):
            tokens.append(t)
            flags.append(True)
        pos = m.end()
    for t in tokenize(template[pos:]):
        tokens.append(t)
        flags.append(False)
    return tokens, flags


def signal_lexicon(bank: Mapping[PrimitiveKind, Mapping[str, Sequence[str]]] = TEMPLATE_BANK) -> dict[str, tuple[str, str]]:
    """Map each signal span (as space-joined tokens) to its (kind, label)."""
    lex = {}
    for kind, by_label in bank.items():
        for label, templates in by_label.items():
            for tpl in templates:
                for m in _SPAN.finditer(tpl):
                    lex[" ".join(tokenize(m.group(1)))] = (kind.value, label)
    return lex


@dataclass(frozen=True)
class AnnotatedText:
    tokens: tuple[str, ...]
    sig_idx: tuple[int, ...]
    red_idx: tuple[int, ...]

    def __post_init__(self):
        sig, red = set(self.sig_idx), set(self.red_idx)
        if sig & red:
            raise ValueError("signal and redundant token sets overlap")
        if sig | red != set(range(len(self.tokens))):
            raise ValueError("signal and redundant sets must cover every token")
        if not sig:
            raise ValueError("annotated text needs at least one signal token")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def describe_features(truth: PrimitiveVector, stats: Optional[PrimitiveStats] = None,
                      templates: Mapping[PrimitiveKind, Mapping[str, Sequence[str]]] = TEMPLATE_BANK,
                      n_redundant: int = 8, rng: Optional[np.random.Generator] = None,
                      distractors: Sequence[str] = DISTRACTOR_BANK) -> AnnotatedText:
    """Render one signal sentence per primitive among ``n_redundant`` distractor sentences.

    Templates may reference ``{delta_mu}``, ``{r_sigma}``, ``{c}``, ``{d}``, ``{q}``
    when ``stats`` is given; the default bank is purely qualitative.
    """
    if n_redundant < 0:
        raise ValueError("n_redundant must be >= 0")
    if not templates or any(not templates.get(k) for k in KINDS):
        raise ValueError("template bank is empty or misses a primitive")
    if n_redundant and not distractors:
        raise ValueError("distractor bank is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    fmt = {}
    if stats is not None:
        fmt = {"delta_mu": stats.delta_mu, "r_sigma": stats.r_sigma, "c": stats.lag.centroid_c,
               "d": stats.lag.tail_d, "q": stats.lag.peak_q}
    sentences: list[tuple[str, bool]] = []
    for label in truth.as_tuple():
        options = templates[label.kind].get(label.value)
        if not options:
            raise ValueError(f"no template for {label.kind.value}={label.value}")
        tpl = options[int(rng.integers(len(options)))]
        sentences.append((tpl.format(**fmt) if fmt else tpl, True))
    picks = rng.integers(len(distractors), size=n_redundant) if n_redundant else []
    sentences += [(distractors[int(i)], False) for i in picks]
    order = rng.permutation(len(sentences))
    tokens: list[str] = []
    sig: list[int] = []
    red: list[int] = []
    for i in order:
        sent, is_signal = sentences[int(i)]
        toks, flags = render_template(sent) if is_signal else (tokenize(sent), [False] * len(tokenize(sent)))
        for t, f in zip(toks, flags):
            (sig if f else red).append(len(tokens))
            tokens.append(t)
    return AnnotatedText(tuple(tokens), tuple(sig), tuple(red))


# series generation

@dataclass(frozen=True)
class SegmentSpec:
    mean: float
    vol: float
    shape: str = "flat"
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.vol > 0:
            raise ValueError("segment volatility must be positive")
        if self.shape not in ARCHETYPES:
            raise ValueError(f"unknown shape archetype {self.shape!r}")


@dataclass(frozen=True)
class RegimeSpec:
    segments: tuple[SegmentSpec, ...]
    noise_seed: int = 0
    lengths: Optional[tuple[int, ...]] = None  # default: equal split

    def __post_init__(self):
        if len(self.segments) < 1:
            raise ValueError("need at least one segment")
        if self.lengths is not None and len(self.lengths) != len(self.segments):
            raise ValueError("lengths must match the segment count")


def _archetype(shape: str, n: int, amplitude: float) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    if shape == "ascend":
        return amplitude * (t - 0.5)
    if shape == "descend":
        return amplitude * (0.5 - t)
    if shape == "peak":
        return amplitude * np.sin(np.pi * t)
    if shape == "trough":
        return -amplitude * np.sin(np.pi * t)
    if shape == "oscillate":
        return 0.5 * amplitude * np.sin(4 * np.pi * t)
    return np.zeros(n)


def generate_nonstationary_series(spec: RegimeSpec, length: int, noise_scale: float = 1.0) -> TimeSeries:
    """Concatenated regime segments: level + archetype + vol * N(0, 1) noise, seeded."""
    nseg = len(spec.segments)
    if length < 8 * nseg:
        raise ValueError(f"length {length} too short for {nseg} segments (need >= {8 * nseg})")
    if spec.lengths is None:
        base = length // nseg
        lengths = [base] * nseg
        lengths[-1] += length - base * nseg
    else:
        lengths = list(spec.lengths)
        if sum(lengths) != length or min(lengths) < 1:
            raise ValueError("segment lengths must be positive and sum to length")
    rng = np.random.default_rng(spec.noise_seed)
    parts = []
    for seg, n in zip(spec.segments, lengths):
        noise = rng.standard_normal(n) * seg.vol * noise_scale
        parts.append(seg.mean + _archetype(seg.shape, n, seg.amplitude) + noise)
    return TimeSeries.from_values(np.concatenate(parts))


@dataclass(frozen=True)
class BenchmarkConfig:
    length: int = 3200
    L: int = 48
    H: int = 16
    step: int = 4
    mean_segment: int = 40
    min_segment: int = 12
    level_jump: float = 3.0
    vol_range: tuple[float, float] = (0.2, 1.5)
    amplitude_range: tuple[float, float] = (0.0, 4.0)
    redundant_range: tuple[int, int] = (4, 16)
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0


def random_regime_spec(cfg: BenchmarkConfig, rng: np.random.Generator) -> RegimeSpec:
    lengths = []
    remaining = cfg.length
    while remaining > 0:
        n = max(cfg.min_segment, int(rng.exponential(cfg.mean_segment)))
        n = min(n, remaining)
        if remaining - n < cfg.min_segment:
            n = remaining
        lengths.append(n)
        remaining -= n
    level = 0.0
    segments = []
    for _ in lengths:
        level += rng.normal(0.0, cfg.level_jump)
        level *= 0.9  # mild pull toward zero keeps levels bounded
        segments.append(
            SegmentSpec(
                mean=level,
                vol=float(rng.uniform(*cfg.vol_range)),
                shape=ARCHETYPES[int(rng.integers(len(ARCHETYPES)))],
                amplitude=float(rng.uniform(*cfg.amplitude_range)),
            )
        )
    return RegimeSpec(tuple(segments), int(rng.integers(2**31)), tuple(lengths))


@dataclass(frozen=True)
class BenchmarkSample:
    window: Window
    truth: PrimitiveVector
    text: AnnotatedText
    stats: PrimitiveStats

    def to_record(self) -> dict:
        return {
            "origin": self.window.origin_index,
            "window": self.window.x_obs.tolist(),
            "horizon": self.window.y_fut.tolist(),
            "tokens": list(self.text.tokens),
            "sig_idx": list(self.text.sig_idx),
            "red_idx": list(self.text.red_idx),
            "truth": dict(zip((k.value for k in KINDS), self.truth.values())),
            "stats": self.stats.to_dict(),
        }


@dataclass
class Benchmark:
    splits: dict[str, list[BenchmarkSample]]
    thresholds: ThresholdSet
    series: TimeSeries
    split_bounds: dict[str, tuple[int, int]] = field(default_factory=dict)

    def windows(self, split: str) -> list[Window]:
        return [s.window for s in self.splits[split]]


def chronological_bounds(n: int, fractions: Sequence[float]) -> dict[str, tuple[int, int]]:
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must be positive and sum to 1")
    cuts = np.round(np.cumsum([0.0, *fractions]) * n).astype(int)
    return {name: (int(cuts[i]), int(cuts[i + 1])) for i, name in enumerate(("train", "val", "test"))}


def build_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(),
                    threshold_cfg: ThresholdConfig = ThresholdConfig()) -> Benchmark:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    spec = random_regime_spec(cfg, rng)
    series = generate_nonstationary_series(spec, cfg.length)
    bounds = chronological_bounds(len(series), cfg.split)
    raw: dict[str, list[Window]] = {}
    for name, (lo, hi) in bounds.items():
        part = TimeSeries(series.timestamps[lo:hi], series.values[lo:hi])
        ws = slide_windows(part, cfg.L, cfg.H, cfg.step)
        raw[name] = [Window(w.x_obs, w.y_fut, w.origin_index + lo) for w in ws]
    thr = fit_thresholds(raw["train"], threshold_cfg)
    text_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    splits = {}
    for name, ws in raw.items():
        samples = []
        for w in ws:
            stats = compute_stats(w.x_obs, w.y_fut, thr)
            truth = classify_stats(stats, thr)
            n_red = int(text_rng.integers(cfg.redundant_range[0], cfg.redundant_range[1] + 1))
            text = describe_features(truth, None, TEMPLATE_BANK, n_red, text_rng)
            samples.append(BenchmarkSample(w, truth, text, stats))
        splits[name] = samples
    return Benchmark(splits, thr, series, bounds)


def write_benchmark(bench: Benchmark, out_dir: Union[str, os.PathLike]) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, samples in bench.splits.items():
        path = out / f"{name}.jsonl"
        tmp = path.with_suffix(".jsonl.tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for s in samples:
                fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")
        os.replace(tmp, path)
        paths[name] = path
    thr_path = out / "thresholds.json"
    thr_path.write_text(bench.thresholds.to_json() + "\n", encoding="utf-8")
    paths["thresholds"] = thr_path
    return paths


def read_split(path: Union[str, os.PathLike], thr: ThresholdSet) -> list[BenchmarkSample]:
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            w = Window(np.array(rec["window"]), np.array(rec["horizon"]), rec["origin"])
            stats = compute_stats(w.x_obs, w.y_fut, thr)
            truth = PrimitiveVector.from_values([rec["truth"][k.value] for k in KINDS])
            text = AnnotatedText(tuple(rec["tokens"]), tuple(rec["sig_idx"]), tuple(rec["red_idx"]))
            samples.append(BenchmarkSample(w, truth, text, stats))
    return samples


class Variant(str, enum.Enum):
    FULL = "full"
    SIGNAL_ONLY = "signal_only"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class VariantInput:
    x_obs: np.ndarray
    tokens: tuple[str, ...]
    exog: Optional[np.ndarray]


def make_variant(sample: BenchmarkSample, variant: Union[Variant, str]) -> VariantInput:
    variant = Variant(variant)
    x = sample.window.x_obs
    if variant is Variant.FULL:
        return VariantInput(x, sample.text.tokens, None)
    if variant is Variant.SIGNAL_ONLY:
        return VariantInput(x, tuple(sample.text.tokens[i] for i in sorted(sample.text.sig_idx)), None)
    return VariantInput(x, (), sample.stats.exogenous())
