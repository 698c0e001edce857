"""Equitable access through graph augmentation.

Directed graphs with per-group walk dynamics, exact and simulated access
metrics, a greedy baseline (GECI) and a differentiable optimizer over a
Markov reward process (MRP), plus facility placement and bundle I/O.
"""

from .evaluate import EvalReport, EvalSettings, exact_group_utility, full_report, gini, monte_carlo_reward
from .facility import train_facility
from .geci import geci_augment
from .graph import DiGraph, EditSet, GraphError, GroupSpec, RewardSet, build_transition, hamming
from .ingest import DatasetBundle, load_bundle, save_bundle
from .mrp import TrainConfig, TrainingDiverged, optimize_edges, value_rollout
from .synth import EnsembleConfig, generate, synthetic_instance

__all__ = [
    "DatasetBundle",
    "DiGraph",
    "EditSet",
    "EnsembleConfig",
    "EvalReport",
    "EvalSettings",
    "GraphError",
    "GroupSpec",
    "RewardSet",
    "TrainConfig",
    "TrainingDiverged",
    "build_transition",
    "exact_group_utility",
    "full_report",
    "generate",
    "geci_augment",
    "gini",
    "hamming",
    "load_bundle",
    "monte_carlo_reward",
    "optimize_edges",
    "save_bundle",
    "synthetic_instance",
    "train_facility",
    "value_rollout",
]
