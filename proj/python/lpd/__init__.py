"""Multi-space text-to-video retrieval with partial de-correlation."""

from ._core import (
    Dataset,
    FeatureStoreError,
    ModelError,
    ModelParams,
    SyntheticConfig,
    TrainingConfig,
    TrainingError,
    TrainResult,
    average_precision,
    cosine,
    dcl_all,
    dcl_pair,
    embedding_entropy,
    entropy_weights,
    evaluate,
    forward,
    generate_synthetic,
    gradcheck,
    histogram_entropy,
    itrl,
    load_dataset,
    pearson,
    rank,
    softmax,
    train,
    write_dataset,
)

__all__ = [
    "Dataset",
    "FeatureStoreError",
    "ModelError",
    "ModelParams",
    "SyntheticConfig",
    "TrainingConfig",
    "TrainingError",
    "TrainResult",
    "average_precision",
    "cosine",
    "dcl_all",
    "dcl_pair",
    "embedding_entropy",
    "entropy_weights",
    "evaluate",
    "forward",
    "generate_synthetic",
    "gradcheck",
    "histogram_entropy",
    "itrl",
    "load_dataset",
    "pearson",
    "rank",
    "softmax",
    "train",
    "write_dataset",
]
