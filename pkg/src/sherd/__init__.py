"""Robust graph compression by scoring balanced node clusters with early GCN representations."""

from __future__ import annotations

from .attacks import ATTACKS, AttackBudget, PerturbedGraph, cluster_pgd_attack, evasion_attack
from .baselines import baseline_compress, jaccard_purify, svd_purify
from .bench import ExperimentConfig, run_experiment, sweep_distance_grid, sweep_hyperparams
from .clustering import ClusterAssignment, balanced_kmeans
from .core import (
    ScoreTable,
    SherdConfig,
    combine_and_select,
    performance_scores,
    phase1_partial_train,
    robustness_scores,
    run_sherd,
)
from .distances import METRICS, repr_distance
from .errors import ConfigError, DataError, LoadError, SchemaError, SherdError
from .gcn import GcnParams, HiddenRepr, TrainConfig, evaluate_accuracy, forward, hidden, train, train_full
from .graph import GraphData, SubgraphMask, induced_subgraph, load_dataset, normalize_adjacency, save_dataset

__version__ = "0.1.0"

__all__ = [
    "ATTACKS", "METRICS", "AttackBudget", "ClusterAssignment", "ConfigError", "DataError",
    "ExperimentConfig", "GcnParams", "GraphData", "HiddenRepr", "LoadError", "PerturbedGraph",
    "SchemaError", "ScoreTable", "SherdConfig", "SherdError", "SubgraphMask", "TrainConfig",
    "balanced_kmeans", "baseline_compress", "cluster_pgd_attack", "combine_and_select",
    "evaluate_accuracy", "evasion_attack", "forward", "hidden", "induced_subgraph", "jaccard_purify",
    "load_dataset", "normalize_adjacency", "performance_scores", "phase1_partial_train",
    "repr_distance", "robustness_scores", "run_experiment", "run_sherd", "save_dataset",
    "svd_purify", "sweep_distance_grid", "sweep_hyperparams", "train", "train_full",
]
