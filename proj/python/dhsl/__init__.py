"""Siamese CNN feature extractor with a learned hybrid similarity."""

from ._dhsl import (
    ConfigError,
    DataError,
    Dataset,
    DivergenceError,
    Error,
    FormatError,
    IoError,
    Model,
    ProtocolError,
    ShapeError,
    cmc,
    count_metric_params,
    evaluate,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "Error",
    "FormatError",
    "IoError",
    "Model",
    "ProtocolError",
    "ShapeError",
    "cmc",
    "count_metric_params",
    "evaluate",
    "train",
]
