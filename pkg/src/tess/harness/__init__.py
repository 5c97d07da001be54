from .experiment import ExperimentError, ReportBundle, RunConfig, run_experiment
from .io import DatasetManifest, TextRecord, align_text, load_series_csv, load_text_jsonl
from .metrics import MetricsRow, Subset, metrics, nonstationary_subsets, ranking_auc

__all__ = [
    "align_text",
    "DatasetManifest",
    "ExperimentError",
    "load_series_csv",
    "load_text_jsonl",
    "metrics",
    "MetricsRow",
    "nonstationary_subsets",
    "ranking_auc",
    "ReportBundle",
    "run_experiment",
    "RunConfig",
    "Subset",
    "TextRecord",
]
