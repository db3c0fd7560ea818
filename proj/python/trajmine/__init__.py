"""Trajectory representation pipeline for bot-group detection."""

from ._core import (
    MINUTES_PER_DAY,
    NOISE,
    ApiClient,
    Error,
    bin_cell,
    cluster,
    cluster_stage,
    dbscan,
    embed,
    evaluate,
    knn_distances,
    load_representations,
    prep,
    q_key,
    select_epsilon,
    simulate,
    time_jaccard,
    train,
)

__all__ = [
    "MINUTES_PER_DAY",
    "NOISE",
    "ApiClient",
    "Error",
    "bin_cell",
    "cluster",
    "cluster_stage",
    "dbscan",
    "embed",
    "evaluate",
    "knn_distances",
    "load_representations",
    "prep",
    "q_key",
    "select_epsilon",
    "simulate",
    "time_jaccard",
    "train",
]
