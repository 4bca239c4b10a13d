"""Radar touch localization: simulation, CSP and CNN positioning, evaluation."""

from ._mmtouch import (
    ConfigError,
    DependencyError,
    Error,
    FormatError,
    GeometryError,
    Model,
    RangeError,
    ShapeError,
    TrainingError,
    bench_latency,
    calibrate,
    cnn_eval,
    csp_eval,
    default_config,
    estimate_calibration,
    load_features,
    oversampled_bin_cm,
    percentile,
    range_bin_cm,
    range_fft,
    report,
    simulate,
    solve_nls,
    train,
    validate_config,
)

__all__ = [
    "ConfigError",
    "DependencyError",
    "Error",
    "FormatError",
    "GeometryError",
    "Model",
    "RangeError",
    "ShapeError",
    "TrainingError",
    "bench_latency",
    "calibrate",
    "cnn_eval",
    "csp_eval",
    "default_config",
    "estimate_calibration",
    "load_features",
    "oversampled_bin_cm",
    "percentile",
    "range_bin_cm",
    "range_fft",
    "report",
    "simulate",
    "solve_nls",
    "train",
    "validate_config",
]
