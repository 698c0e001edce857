"""Access metrics: exact inverse-distance utility, Monte Carlo walk reward,
Gini index and mean hop distance per group."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .graph import (
    UNREACHABLE,
    DiGraph,
    EditSet,
    GraphError,
    GroupSpec,
    RewardSet,
    build_transition,
    edits_matrix,
    shortest_distance_to_reward,
)

DEFAULT_WALKS = 5000


def access_from_distance(dist: np.ndarray) -> np.ndarray:
    """1/d for d >= 1, 1 at reward nodes, 0 where no path exists."""
    dist = np.asarray(dist)
    acc = np.zeros(dist.shape, dtype=float)
    acc[dist == 0] = 1.0
    far = dist > 0
    acc[far] = 1.0 / dist[far]
    return acc


def exact_group_utility(
    graph: DiGraph, edits: EditSet | None, rewards: RewardSet, group: GroupSpec
) -> float:
    dist = shortest_distance_to_reward(graph, rewards, edits)
    return float(group.mu0 @ access_from_distance(dist))


class PathStats(NamedTuple):
    mean: float
    unreachable_mass: float


def mean_shortest_path_by_group(
    graph: DiGraph, edits: EditSet | None, rewards: RewardSet, group: GroupSpec
) -> PathStats:
    """Mean hop distance to the nearest reward over the group's start mass.

    Unreachable nodes are left out of the mean; their share of the mass is
    returned alongside it.
    """
    dist = shortest_distance_to_reward(graph, rewards, edits)
    mu = group.mu0
    ok = dist != UNREACHABLE
    mass = mu[ok].sum()
    if mass <= 0:
        raise GraphError(f"group {group.id!r}: no start node can reach a reward")
    return PathStats(float(mu[ok] @ dist[ok] / mass), float(mu[~ok].sum()))


def gini(values: Sequence[float] | np.ndarray) -> float:
    """Gini index, sum_ij |x_i - x_j| / (2 n^2 mean(x)).

    Evaluated in O(n log n) through the sorted-rank identity.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("gini needs at least one value")
    if (x < 0).any():
        raise ValueError("gini is defined for non-negative values only")
    total = x.sum()
    if total <= 0:
        return 0.0
    x = np.sort(x)
    if x[0] == x[-1]:
        return 0.0
    n = x.size
    ranks = 2.0 * np.arange(n) - n + 1.0
    g = float(ranks @ x / (n * total))
    return min(max(g, 0.0), 1.0)


def walk_transition(graph: DiGraph, edits: EditSet | None, group: GroupSpec) -> np.ndarray:
    soft = edits_matrix(graph, edits) if edits else None
    return build_transition(graph, soft, group)


def simulate_walk_rewards(
    P: np.ndarray,
    mu0: np.ndarray,
    rewards: RewardSet,
    walks: int,
    horizon: int,
    gamma: float,
    seed: int,
    accumulate: bool = False,
) -> np.ndarray:
    """Per-walk discounted reward of weighted random walks on ``P``.

    Walk ``i`` consumes row ``i`` of a ``(walks, horizon)`` uniform block
    drawn from ``seed``, so its path depends only on (seed, i). In the
    default first-hit mode reward nodes absorb and a walk earns gamma^t for
    its first arrival at time t < horizon. With ``accumulate`` walks keep
    moving and earn gamma^t on every visit.
    """
    if walks < 1 or horizon < 1:
        raise ValueError("walks and horizon must be >= 1")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    n = P.shape[0]
    is_reward = rewards.indicator(n).astype(bool)
    rng = np.random.default_rng(seed)
    U = rng.random((walks, horizon))

    start_cdf = np.cumsum(mu0)
    start_cdf[-1] = 1.0
    cur = np.minimum(np.searchsorted(start_cdf, U[:, 0], side="right"), n - 1)
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0

    out = np.zeros(walks)
    alive = np.ones(walks, dtype=bool)
    for t in range(horizon):
        if t > 0:
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            u = U[idx, t]
            nxt = (cdf[cur[idx]] <= u[:, None]).sum(axis=1)
            cur[idx] = np.minimum(nxt, n - 1)
        hit = alive & is_reward[cur]
        out[hit] += gamma**t
        if not accumulate:
            alive &= ~hit
    return out


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    mean = math.fsum(samples) / samples.size
    if samples.size < 2:
        return mean, 0.0
    var = math.fsum((samples - mean) ** 2) / (samples.size - 1)
    return mean, math.sqrt(var / samples.size)


def monte_carlo_reward(
    graph: DiGraph,
    edits: EditSet | None,
    rewards: RewardSet,
    group: GroupSpec,
    walks: int = DEFAULT_WALKS,
    horizon: int = 10,
    gamma: float = 0.99,
    seed: int = 0,
    accumulate: bool = False,
) -> tuple[float, float]:
    """Sample mean and standard error of the walk reward for one group."""
    P = walk_transition(graph, edits, group)
    samples = simulate_walk_rewards(P, group.mu0, rewards, walks, horizon, gamma, seed, accumulate)
    return _mean_stderr(samples)


@dataclass(frozen=True)
class EvalSettings:
    walks: int = DEFAULT_WALKS
    horizon: int = 10
    gamma: float = 0.99
    seed: int = 0
    accumulate: bool = False


@dataclass
class EvalReport:
    """Per-group access metrics for one (graph, edits, rewards) triple.

    ``per_group_utility`` is the exact inverse-distance utility;
    ``per_group_reward`` and ``stderr_per_group`` summarize the walks.
    ``pooled_gini`` runs over every individual walk of every group,
    ``group_mean_gini`` over the per-group mean rewards.
    """

    groups: list[str]
    per_group_utility: dict[str, float]
    per_group_reward: dict[str, float]
    stderr_per_group: dict[str, float]
    pooled_gini: float
    group_mean_gini: float
    intra_group_gini: dict[str, float]
    mean_sp_by_group: dict[str, float]
    unreachable_mass_by_group: dict[str, float]
    walks_per_group: int
    pooled_samples: int
    edits: int = 0
    settings: dict = field(default_factory=dict)

    @property
    def utility(self) -> float:
        return float(np.mean([self.per_group_utility[g] for g in self.groups]))

    @property
    def reward(self) -> float:
        return float(np.mean([self.per_group_reward[g] for g in self.groups]))

    @property
    def equity_deviation(self) -> float:
        u = np.array([self.per_group_utility[g] for g in self.groups])
        return float(np.abs(u - u.mean()).sum())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["utility"] = self.utility
        d["reward"] = self.reward
        d["equity_deviation"] = self.equity_deviation
        return d

    def csv_fields(self) -> list[str]:
        head = ["utility", "reward", "pooled_gini", "group_mean_gini", "equity_deviation", "edits"]
        per = []
        for g in self.groups:
            per += [f"utility[{g}]", f"reward[{g}]", f"stderr[{g}]", f"gini[{g}]", f"mean_sp[{g}]"]
        return head + per

    def csv_row(self) -> list[float]:
        row = [
            self.utility,
            self.reward,
            self.pooled_gini,
            self.group_mean_gini,
            self.equity_deviation,
            self.edits,
        ]
        for g in self.groups:
            row += [
                self.per_group_utility[g],
                self.per_group_reward[g],
                self.stderr_per_group[g],
                self.intra_group_gini[g],
                self.mean_sp_by_group[g],
            ]
        return row


def group_seed(seed: int, index: int) -> int:
    """Independent, reproducible sub-seed for the ``index``-th group."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def full_report(
    graph: DiGraph,
    edits: EditSet | None,
    rewards: RewardSet,
    groups: Sequence[GroupSpec],
    settings: EvalSettings = EvalSettings(),
) -> EvalReport:
    edits = edits or EditSet()
    ids = [g.id for g in groups]
    util, rew, err, ig, msp, unr = {}, {}, {}, {}, {}, {}
    pooled = []
    for idx, g in enumerate(groups):
        util[g.id] = exact_group_utility(graph, edits, rewards, g)
        P = walk_transition(graph, edits, g)
        samples = simulate_walk_rewards(
            P,
            g.mu0,
            rewards,
            settings.walks,
            settings.horizon,
            settings.gamma,
            group_seed(settings.seed, idx),
            settings.accumulate,
        )
        rew[g.id], err[g.id] = _mean_stderr(samples)
        ig[g.id] = gini(samples)
        stats = mean_shortest_path_by_group(graph, edits, rewards, g)
        msp[g.id], unr[g.id] = stats.mean, stats.unreachable_mass
        pooled.append(samples)
    pooled_arr = np.concatenate(pooled)
    return EvalReport(
        groups=ids,
        per_group_utility=util,
        per_group_reward=rew,
        stderr_per_group=err,
        pooled_gini=gini(pooled_arr),
        group_mean_gini=gini([rew[g] for g in ids]),
        intra_group_gini=ig,
        mean_sp_by_group=msp,
        unreachable_mass_by_group=unr,
        walks_per_group=settings.walks,
        pooled_samples=int(pooled_arr.size),
        edits=len(edits),
        settings=asdict(settings),
    )
