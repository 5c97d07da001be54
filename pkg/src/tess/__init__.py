"""Primitive-conditioned time-series forecasting with text-derived temporal primitives."""
from .forecaster import ModelConfig, PrefixForecaster, PrimitiveInputs, TrainConfig, forecast, train
from .primitives import (
    KINDS,
    PrimitiveKind,
    PrimitiveLabel,
    PrimitiveVector,
    ThresholdConfig,
    ThresholdSet,
    extract_all,
    fit_thresholds,
)
from .series import TimeSeries, Window, instance_normalize, inverse_normalize, slide_windows

__version__ = "0.1.0"

__all__ = [
    "extract_all",
    "fit_thresholds",
    "forecast",
    "instance_normalize",
    "inverse_normalize",
    "KINDS",
    "ModelConfig",
    "PrefixForecaster",
    "PrimitiveInputs",
    "PrimitiveKind",
    "PrimitiveLabel",
    "PrimitiveVector",
    "slide_windows",
    "ThresholdConfig",
    "ThresholdSet",
    "TimeSeries",
    "train",
    "TrainConfig",
    "Window",
]
