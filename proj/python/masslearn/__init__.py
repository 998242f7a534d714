"""MASS learning and conserved differential information."""

from ._masslearn import (
    ConfigError,
    Model,
    UnsupportedMethod,
    accuracy,
    auroc,
    average_precision,
    bayes_accuracy,
    brier,
    cdi_estimate,
    dpi_check,
    gaussian_blobs,
    knn_entropy,
    map_names,
    nll,
    predictive_entropy,
    quantized_mi,
    train,
)

__all__ = [
    "ConfigError",
    "Model",
    "UnsupportedMethod",
    "accuracy",
    "auroc",
    "average_precision",
    "bayes_accuracy",
    "brier",
    "cdi_estimate",
    "dpi_check",
    "gaussian_blobs",
    "knn_entropy",
    "map_names",
    "nll",
    "predictive_entropy",
    "quantized_mi",
    "train",
]
