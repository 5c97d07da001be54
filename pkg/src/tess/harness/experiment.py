"""End-to-end experiment: data -> thresholds -> labels -> train -> evaluate -> diagnose -> report files."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from ..baseline import BaselineConfig, train_baseline
from ..benchmark import (
    Benchmark,
    BenchmarkConfig,
    Variant,
    build_benchmark,
    make_variant,
    signal_lexicon,
    write_benchmark,
)
from ..checkpoint import save_checkpoint
from ..diagnostics import histogram, run_attention_diagnostic
from ..forecaster import Dataset, ModelConfig, PrefixForecaster, PrimitiveInputs, TrainConfig, parse_mode, train
from ..llm import (
    EndpointConfig,
    ExtractionConfig,
    HTTPBackend,
    KeywordMockBackend,
    ResponseCache,
    extract_batch,
)
from ..primitives import KINDS, PrimitiveVector, ThresholdConfig, ThresholdSet, extract_all, fit_thresholds
from ..series import Window
from .io import DatasetManifest, align_text, atomic_write_text, load_series_csv, load_text_jsonl, split_windows
from .metrics import MetricsRow, Subset, metrics, nonstationary_subsets

log = logging.getLogger(__name__)

STAGES = ("data", "thresholds", "extract", "train", "evaluate", "diagnose", "report")
DEFAULT_ROLE = "a financial market analyst"
DEFAULT_DOMAIN = "Daily closing prices of a traded asset; the text is news published during the observation window."


def mode_tag(mode: str) -> str:
    kind, dropped = parse_mode(mode)
    if kind == "full":
        return "full"
    if kind == "no_tess":
        return "w/o TESS"
    if kind == "no_gating":
        return "w/o Gating"
    return f"w/o {dropped.value}"


def _build(cls, data: Optional[dict]):
    if data is None:
        return cls()
    data = dict(data)
    for f in fields(cls):
        if f.name in data and isinstance(data[f.name], list):
            data[f.name] = tuple(data[f.name])
    return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    thresholds: ThresholdConfig = ThresholdConfig()
    endpoint: Optional[EndpointConfig] = None
    benchmark: BenchmarkConfig = BenchmarkConfig()
    train: TrainConfig = TrainConfig()
    extraction: ExtractionConfig = ExtractionConfig()
    dataset: Optional[DatasetManifest] = None  # None: semi-synthetic benchmark
    labels: str = "oracle"  # oracle | llm
    mock_llm: bool = False
    mock_error_rate: float = 0.1
    oracle_margin: float = 4.0
    ablations: tuple[str, ...] = ()
    diagnose: bool = True
    seed: int = 0
    out_dir: str = "runs/default"
    role: str = DEFAULT_ROLE
    domain_context: str = DEFAULT_DOMAIN

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.labels not in ("oracle", "llm"):
            raise ValueError(f"labels must be 'oracle' or 'llm', got {self.labels!r}")
        if self.labels == "llm" and not self.mock_llm and self.endpoint is None:
            raise ValueError("labels='llm' needs an endpoint config or mock_llm")
        for mode in self.ablations:
            parse_mode(mode)
        L, H = (self.dataset.L, self.dataset.H) if self.dataset else (self.benchmark.L, self.benchmark.H)
        if (self.model.L, self.model.H) != (L, H):
            raise ValueError(f"model (L={self.model.L}, H={self.model.H}) does not match data (L={L}, H={H})")
        if H % self.thresholds.n_fcst:
            raise ValueError(f"n_fcst={self.thresholds.n_fcst} does not divide H={H}")
        if self.diagnose and self.dataset is not None:
            raise ValueError("the attention diagnostic needs the annotated benchmark (dataset must be unset)")
        if not self.out_dir:
            raise ValueError("out_dir must be set")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            seed=seed,
            model=replace(self.model, seed=seed),
            train=replace(self.train, seed=seed),
            benchmark=replace(self.benchmark, seed=seed),
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        d = dict(d)
        nested = {
            "model": ModelConfig, "thresholds": ThresholdConfig, "benchmark": BenchmarkConfig,
            "train": TrainConfig, "extraction": ExtractionConfig,
        }
        for key, typ in nested.items():
            d[key] = _build(typ, d.get(key))
        for key, typ in (("endpoint", EndpointConfig), ("dataset", DatasetManifest)):
            d[key] = _build(typ, d[key]) if d.get(key) is not None else None
        if "ablations" in d:
            d["ablations"] = tuple(d["ablations"])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def smoke(cls, out_dir: str = "runs/smoke", **overrides) -> "RunConfig":
        """Small synthetic configuration that finishes in seconds."""
        base = cls(
            model=ModelConfig(L=32, H=8, P=8, S=8, d_model=16, n_layers=1, n_heads=2, ff_width=32),
            thresholds=ThresholdConfig(n_fcst=4),
            benchmark=BenchmarkConfig(length=900, L=32, H=8, step=4),
            train=TrainConfig(epochs=3, batch_size=32),
            out_dir=out_dir,
        )
        return replace(base, **overrides)


@dataclass
class SplitData:
    windows: list[Window]
    texts: list[str]
    truth: list[PrimitiveVector]


@dataclass
class RunState:
    cfg: RunConfig
    out: Path
    stages: dict[str, str] = field(default_factory=lambda: {s: "pending" for s in STAGES})
    splits: dict[str, SplitData] = field(default_factory=dict)
    bench: Optional[Benchmark] = None
    thresholds: Optional[ThresholdSet] = None
    inputs: dict[str, PrimitiveInputs] = field(default_factory=dict)
    models: dict[str, PrefixForecaster] = field(default_factory=dict)
    curves: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def dataset(self, split: str) -> Dataset:
        d = self.splits[split]
        return Dataset.from_windows(d.windows, self.inputs.get(split), self.thresholds)


def _fmt(v) -> str:
    return format(v, ".10g") if isinstance(v, float) else str(v)


def _csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _write(state: RunState, name: str, text: str) -> None:
    path = state.out / name
    atomic_write_text(path, text)
    state.files[name] = str(path)


# stages

def stage_data(state: RunState) -> None:
    cfg = state.cfg
    if cfg.dataset is None:
        bench = build_benchmark(cfg.benchmark, cfg.thresholds)
        state.bench = bench
        state.thresholds = bench.thresholds
        for name, samples in bench.splits.items():
            state.splits[name] = SplitData(
                [s.window for s in samples], [s.text.text for s in samples], [s.truth for s in samples]
            )
        state.extra["benchmark_files"] = {k: str(v) for k, v in write_benchmark(bench, state.out / "benchmark").items()}
        return
    man = cfg.dataset
    series = load_series_csv(man.series_path, man)
    texts = load_text_jsonl(man.text_path) if man.text_path else []
    for name, (windows, ts) in split_windows(series, man).items():
        aligned = align_text(windows, texts, ts) if texts else [""] * len(windows)
        state.splits[name] = SplitData(windows, aligned, [])


def stage_thresholds(state: RunState) -> None:
    if state.thresholds is None:
        state.thresholds = fit_thresholds(state.splits["train"].windows, state.cfg.thresholds)
    for split in state.splits.values():
        if not split.truth:
            split.truth = [extract_all(w.x_obs, w.y_fut, state.thresholds) for w in split.windows]
    _write(state, "thresholds.json", json.dumps(state.thresholds.to_dict(), indent=2, sort_keys=True) + "\n")


def make_backend(cfg: RunConfig):
    if cfg.mock_llm:
        return KeywordMockBackend(signal_lexicon(), error_rate=cfg.mock_error_rate, seed=cfg.seed)
    return HTTPBackend(cfg.endpoint)


def stage_extract(state: RunState) -> None:
    cfg = state.cfg
    if cfg.labels == "oracle":
        for name, split in state.splits.items():
            state.inputs[name] = PrimitiveInputs.from_vectors(split.truth, cfg.oracle_margin)
        return
    backend = make_backend(cfg)
    ecfg = cfg.extraction
    if cfg.endpoint is not None and not cfg.mock_llm:
        ecfg = replace(ecfg, scoring_mode=cfg.endpoint.scoring_mode,
                       max_parallel_requests=cfg.endpoint.max_parallel_requests)
    cache = ResponseCache(state.out / "llm_cache.jsonl")
    lines = []
    for name, split in state.splits.items():
        results = extract_batch(backend, cache, split.texts, cfg.role, cfg.domain_context, ecfg)
        state.inputs[name] = PrimitiveInputs.from_extractions(results)
        for i, res in enumerate(results):
            rec = {"split": name, "index": i,
                   "primitives": None if res is None else {k.value: res[k].to_dict() for k in KINDS}}
            for p in (rec["primitives"] or {}).values():
                p.pop("cached", None)
            lines.append(json.dumps(rec, sort_keys=True))
    _write(state, "extractions.jsonl", "\n".join(lines) + "\n")
    acc = {}
    for name, split in state.splits.items():
        inp = state.inputs[name]
        truth = np.array([v.indices() for v in split.truth])
        hit = (inp.labels == truth) & inp.present
        acc[name] = {k.value: float(hit[:, j].sum() / max(inp.present[:, j].sum(), 1)) for j, k in enumerate(KINDS)}
    state.extra["extraction_accuracy"] = acc


def stage_train(state: RunState) -> None:
    cfg = state.cfg
    tr, va = state.dataset("train"), state.dataset("val")
    modes = [cfg.model.mode] + [m for m in cfg.ablations if m != cfg.model.mode]
    for mode in modes:
        mcfg = replace(cfg.model, mode=mode)
        model, report = train(tr, mcfg, cfg.train, va)
        tag = mode_tag(mode)
        state.models[tag] = model
        for e in report.epochs:
            state.curves.append({"model": tag, **{k: e[k] for k in ("epoch", "loss", "l_fcst", "l_gate", "val_loss")}})
        state.extra.setdefault("best_epoch", {})[tag] = report.best_epoch
    ckpt = state.out / "checkpoint.tess"
    save_checkpoint(ckpt, state.models[mode_tag(cfg.model.mode)], state.thresholds, {"run_seed": cfg.seed})
    state.files["checkpoint.tess"] = str(ckpt)
    _write(state, "loss_curves.csv", _csv(state.curves, ["model", "epoch", "loss", "l_fcst", "l_gate", "val_loss"]))


def _row(model: str, subset: str, m: MetricsRow) -> dict:
    return {"model": model, "subset": subset, **m.to_dict()}


def stage_evaluate(state: RunState) -> None:
    test = state.dataset("test")
    subsets = nonstationary_subsets(state.splits["test"].windows, state.thresholds)
    state.extra["subset_sizes"] = {"all": len(test), **{s.value: int(len(ix)) for s, ix in subsets.items()}}
    for tag, model in state.models.items():
        y_hat = model.predict_batch(test.X, test.inputs if model.cfg.K else None)
        state.rows.append(_row(tag, "all", metrics(y_hat, test.Y)))
        for s in Subset:
            ix = subsets[s]
            if len(ix):
                state.rows.append(_row(tag, s.value, metrics(y_hat[ix], test.Y[ix])))


def stage_diagnose(state: RunState) -> None:
    cfg = state.cfg
    bench = state.bench
    mc = cfg.model
    bcfg = BaselineConfig(L=mc.L, H=mc.H, P=mc.P, S=mc.S, d_model=mc.d_model, ff_width=mc.ff_width, seed=cfg.seed)

    def arrays(split: str, variant: Variant):
        bundles = [make_variant(s, variant) for s in bench.splits[split]]
        X = np.stack([b.x_obs for b in bundles])
        Y = np.stack([s.window.y_fut for s in bench.splits[split]])
        tokens = [list(b.tokens) for b in bundles] if variant is not Variant.NUMERICAL else None
        exog = np.stack([b.exog for b in bundles]) if variant is Variant.NUMERICAL else None
        return X, Y, tokens, exog

    baselines = {}
    for variant in Variant:
        vcfg = replace(bcfg, n_exog=5) if variant is Variant.NUMERICAL else bcfg
        X, Y, tokens, exog = arrays("train", variant)
        model, _ = train_baseline(X, Y, tokens, vcfg, cfg.train, exog, arrays("val", variant))
        baselines[variant] = model
        tX, tY, tt, te = arrays("test", variant)
        y_hat, _ = model.predict_batch(tX, tt, te)
        state.rows.append(_row(f"baseline:{variant.value}", "all", metrics(y_hat, tY)))
    report = run_attention_diagnostic(baselines[Variant.FULL], bench.splits["test"])
    per_sample = [{"index": r.index, "n_signal": r.n_signal, "n_redundant": r.n_redundant, "focus": r.focus,
                   "mse_text": r.mse_text, "mse_no_text": r.mse_no_text, "gain": r.gain} for r in report.rows]
    _write(state, "focus_ratio.csv", _csv(per_sample, list(per_sample[0])))
    _write(state, "focus_ratio_hist.csv", _csv(histogram(report.focus_values), ["lo", "hi", "count"]))
    table = report.gain_by_redundancy()
    _write(state, "gain_by_redundancy.csv", _csv(table, ["red_lo", "red_hi", "count", "mean_gain", "mean_focus"]))
    state.extra["focus_fraction_negative"] = report.fraction_negative


def stage_report(state: RunState) -> None:
    cols = ["model", "subset", "n", "mae", "mse", "rmse"]
    _write(state, "metrics.csv", _csv(state.rows, cols))
    _write(state, "metrics.json", json.dumps(state.rows, indent=2, sort_keys=True) + "\n")


@dataclass
class ReportBundle:
    out_dir: Path
    rows: list[dict]
    files: dict[str, str]
    manifest: dict
    state: Optional[RunState] = None


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, bundle: ReportBundle):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.bundle = bundle


def _manifest(state: RunState, error: Optional[str] = None) -> dict:
    return {
        "config": state.cfg.to_dict(),
        "seed": state.cfg.seed,
        "stages": dict(state.stages),
        "error": error,
        "thresholds": state.thresholds.to_dict() if state.thresholds else None,
        "checkpoint": state.files.get("checkpoint.tess"),
        "files": sorted(state.files),
        "sizes": {k: len(v.windows) for k, v in state.splits.items()},
        **state.extra,
    }


def run_experiment(cfg: RunConfig, stages: Sequence[str] = STAGES) -> ReportBundle:
    """Run the requested stages in order; on failure the manifest records which stage broke."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = RunState(cfg, out)
    runners = {
        "data": stage_data, "thresholds": stage_thresholds, "extract": stage_extract, "train": stage_train,
        "evaluate": stage_evaluate, "diagnose": stage_diagnose, "report": stage_report,
    }
    wanted = set(stages)
    if not cfg.diagnose:
        wanted.discard("diagnose")
    for name in STAGES:
        if name not in wanted:
            state.stages[name] = "skipped"
            continue
        log.info("stage %s", name)
        try:
            runners[name](state)
        except Exception as exc:
            state.stages[name] = "failed"
            manifest = _manifest(state, f"{type(exc).__name__}: {exc}")
            atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
            raise ExperimentError(name, exc, ReportBundle(out, state.rows, state.files, manifest, state)) from exc
        state.stages[name] = "ok"
    state.files["manifest.json"] = str(out / "manifest.json")
    manifest = _manifest(state)
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ReportBundle(out, state.rows, state.files, manifest, state)
