"""Equitable facility placement: edges stay fixed and the reward indicator
itself is relaxed and learned."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .graph import DiGraph, GroupSpec, RewardSet, build_transition
from .mrp import TrainConfig, TrainTrajectory, _rollout_states, run_training


@dataclass
class FacilityLogits:
    values: np.ndarray
    tau: float = 1.0

    def to_dict(self) -> dict:
        return {"tau": self.tau, "nodes": [[i, float(v)] for i, v in enumerate(self.values)]}


class FacilityProblem:
    """Soft reward vector over fixed group dynamics.

    With r the relaxed indicator, V_g = r . h_g where h_g is the discounted
    occupancy sum_t gamma^t s_t of the group's rollout, so dV_g/dr = h_g.
    Rewards accumulate on every visit; there is no absorbing variant because
    the reward set is what is being learned.
    """

    def __init__(self, graph: DiGraph, groups: Sequence[GroupSpec], T: int, gamma: float):
        if not groups:
            raise ValueError("need at least one group")
        self.n = graph.n
        self.num_params = graph.n
        self.T = T
        self.disc = gamma ** np.arange(T)
        self.P = [build_transition(graph, None, g) for g in groups]
        self.mus = [g.mu0 for g in groups]

    def occupancy(self, P: np.ndarray, s0: np.ndarray) -> np.ndarray:
        return self.disc @ _rollout_states(P, s0, self.T)

    def values(self, x, dists):
        H = np.array([self.occupancy(P, s0) for P, s0 in zip(self.P, dists)])
        return H @ x, H

    def backward(self, cot, cache):
        return np.asarray(cot) @ cache


def discretize_facilities(logits: np.ndarray, k: int) -> RewardSet:
    """The ``k`` nodes with the largest logits (ties by node id)."""
    if not 1 <= k <= len(logits):
        raise ValueError(f"need 1 <= k <= n, got k={k}")
    order = sorted(range(len(logits)), key=lambda s: (-logits[s], s))
    return RewardSet(tuple(sorted(order[:k])))


@dataclass
class FacilityResult:
    rewards: RewardSet
    logits: FacilityLogits
    trajectory: TrainTrajectory


def train_facility(
    graph: DiGraph, groups: Sequence[GroupSpec], k: int, config: TrainConfig
) -> FacilityResult:
    """Learn ``k`` facility nodes; the budget term counts soft facility mass against k."""
    if not 1 <= k <= graph.n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={graph.n}")
    if config.B != k:
        config = replace(config, B=k)
    problem = FacilityProblem(graph, groups, config.T, config.gamma)
    result = run_training(problem, config)
    rewards = discretize_facilities(result.theta, k)
    return FacilityResult(rewards, FacilityLogits(result.theta, result.tau), result.trajectory)


def random_placement(n: int, k: int, seed: int) -> RewardSet:
    rng = np.random.default_rng(seed)
    return RewardSet(tuple(sorted(int(v) for v in rng.choice(n, size=k, replace=False))))
