"""Hierarchical point cloud attention (C++ core)."""

from ._cloudattn import (
    FormatError,
    Model,
    NumericError,
    ball_query_sorted,
    bench_scaling,
    cosine_lr,
    evaluate,
    fps,
    gen_dataset,
    idw_weights,
    knn,
    load_cloud,
    save_cloud,
    tokenize,
    train,
)

__all__ = [
    "FormatError",
    "Model",
    "NumericError",
    "ball_query_sorted",
    "bench_scaling",
    "cosine_lr",
    "evaluate",
    "fps",
    "gen_dataset",
    "idw_weights",
    "knn",
    "load_cloud",
    "save_cloud",
    "tokenize",
    "train",
]
