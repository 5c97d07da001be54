"""Command-line entry point: ``tess <subcommand> [--config run.json] [--seed N] [--out DIR] [--mock-llm]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from ..checkpoint import load_checkpoint
from .experiment import (
    STAGES,
    ExperimentError,
    RunConfig,
    RunState,
    mode_tag,
    run_experiment,
    stage_data,
    stage_evaluate,
    stage_extract,
    stage_report,
    stage_thresholds,
)

DEFAULT_ABLATIONS = ("no_tess", "no_gating")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--mock-llm", action="store_true", help="use the offline keyword backend for extraction")
    common.add_argument("--smoke", action="store_true", help="start from the small smoke configuration")
    common.add_argument("--labels", choices=("oracle", "llm"), help="primitive label source")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tess", description="Primitive-conditioned forecasting experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit-thresholds", parents=[common], help="fit primitive thresholds on the training split")
    sub.add_parser("extract", parents=[common], help="extract primitives from aligned text with the LLM")
    sub.add_parser("bench", parents=[common], help="build and write the semi-synthetic benchmark")
    sub.add_parser("train", parents=[common], help="train the forecaster and save a checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a saved checkpoint on the test split")
    ev.add_argument("--checkpoint", type=Path, required=True)
    sub.add_parser("diagnose", parents=[common], help="train the fusion baseline and measure focus ratios")
    ab = sub.add_parser("ablate", parents=[common], help="train and evaluate ablated variants")
    ab.add_argument("--modes", nargs="+", default=list(DEFAULT_ABLATIONS),
                    help="ablation modes: no_tess, no_gating, drop:<primitive>")
    sub.add_parser("report", parents=[common], help="run every stage and write all report files")
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.from_json_file(args.config)
    elif args.smoke:
        cfg = RunConfig.smoke()
    else:
        cfg = RunConfig()
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.mock_llm:
        changes["mock_llm"] = True
        changes.setdefault("labels", "llm")
    if args.labels:
        changes["labels"] = args.labels
    if changes:
        cfg = replace(cfg, **changes)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _run(cfg: RunConfig, stages: Sequence[str]) -> dict:
    bundle = run_experiment(cfg, stages)
    return {"out_dir": str(bundle.out_dir), "stages": bundle.manifest["stages"], "files": sorted(bundle.files)}


def _eval(cfg: RunConfig, checkpoint: Path) -> dict:
    model, header = load_checkpoint(checkpoint)
    out = Path(cfg.out_dir)
    state = RunState(cfg, out)
    for stage in (stage_data, stage_thresholds, stage_extract):
        stage(state)
    state.models[mode_tag(model.cfg.mode)] = model
    stage_evaluate(state)
    stage_report(state)
    return {"checkpoint": str(checkpoint), "rows": state.rows}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        cmd = args.command
        if cmd == "fit-thresholds":
            bundle = run_experiment(cfg, ("data", "thresholds"))
            result = bundle.manifest["thresholds"]
        elif cmd == "extract":
            if cfg.labels != "llm":
                cfg = replace(cfg, labels="llm")
            bundle = run_experiment(cfg, ("data", "thresholds", "extract"))
            result = {"extraction_accuracy": bundle.manifest.get("extraction_accuracy"),
                      "file": bundle.files.get("extractions.jsonl")}
        elif cmd == "bench":
            bundle = run_experiment(cfg, ("data", "thresholds"))
            result = {"files": bundle.manifest.get("benchmark_files"), "sizes": bundle.manifest["sizes"]}
        elif cmd == "train":
            result = _run(cfg, ("data", "thresholds", "extract", "train"))
        elif cmd == "eval":
            result = _eval(cfg, args.checkpoint)
        elif cmd == "diagnose":
            bundle = run_experiment(replace(cfg, diagnose=True), ("data", "thresholds", "diagnose", "report"))
            result = {"focus_fraction_negative": bundle.manifest.get("focus_fraction_negative"),
                      "rows": bundle.rows}
        elif cmd == "ablate":
            result = _run(replace(cfg, ablations=tuple(args.modes), diagnose=False),
                          ("data", "thresholds", "extract", "train", "evaluate", "report"))
        else:
            result = _run(cfg, STAGES)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
