"""Greedy equitable centrality improvement: repeatedly add the mask edge that
most raises the exact utility of the currently worst-off group."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .evaluate import exact_group_utility
from .graph import UNREACHABLE, DiGraph, Edge, EditSet, GroupSpec, RewardSet, shortest_distance_to_reward

# Gains within this margin count as ties and fall back to edge order.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class GeciStep:
    step: int
    group: str
    edge: Edge
    before: float
    after: float


@dataclass
class GeciTrace:
    steps: list[GeciStep] = field(default_factory=list)
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "stopped_early": self.stopped_early,
            "steps": [
                {
                    "step": s.step,
                    "group": s.group,
                    "edge": list(s.edge),
                    "before": s.before,
                    "after": s.after,
                }
                for s in self.steps
            ],
        }


def neighborhood(
    graph: DiGraph, edits: EditSet | None, group: GroupSpec | None, rewards: RewardSet, T: int
) -> set[int]:
    """Nodes that reach some reward node within ``T`` hops.

    Topology is shared by all groups, so ``group`` does not change the set.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    dist = shortest_distance_to_reward(graph, rewards, edits)
    return {int(v) for v in np.flatnonzero((dist != UNREACHABLE) & (dist <= T))}


def _pairwise_hops(n: int, edges: frozenset[Edge]) -> np.ndarray:
    """hops[x, u] = directed hop distance from x to u (inf when unreachable)."""
    if not edges:
        D = np.full((n, n), np.inf)
        np.fill_diagonal(D, 0.0)
        return D
    e = np.array(sorted(edges))
    A = csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return shortest_path(A, directed=True, unweighted=True)


def _access(d: np.ndarray) -> np.ndarray:
    out = np.zeros(d.shape)
    out[d == 0] = 1.0
    far = (d > 0) & np.isfinite(d)
    out[far] = 1.0 / d[far]
    return out


def score_candidates(
    graph: DiGraph,
    edits: EditSet,
    rewards: RewardSet,
    group: GroupSpec,
    candidates: Sequence[Edge],
) -> np.ndarray:
    """Exact utility gain of adding each candidate edge on its own.

    Adding (u, v) changes a node's distance to min(d(x), hops(x, u) + 1 + d(v)),
    so one all-pairs hop matrix scores every candidate without a BFS each.
    """
    if not candidates:
        return np.zeros(0)
    n = graph.n
    dist = shortest_distance_to_reward(graph, rewards, edits).astype(float)
    dist[dist == UNREACHABLE] = np.inf
    support = np.flatnonzero(group.mu0 > 0)
    mu = group.mu0[support]
    hops = _pairwise_hops(n, graph.edges | edits.additions)[support]
    d_old = dist[support]
    base = mu @ _access(d_old)

    cand = np.asarray(candidates, dtype=np.int64)
    gains = np.zeros(len(cand))
    order = np.argsort(cand[:, 0], kind="stable")
    tails = cand[order, 0]
    bounds = np.flatnonzero(np.diff(tails)) + 1
    for chunk in np.split(order, bounds):
        u = cand[chunk[0], 0]
        heads = cand[chunk, 1]
        via = hops[:, u][:, None] + 1.0 + dist[heads][None, :]
        new = np.minimum(d_old[:, None], via)
        gains[chunk] = mu @ _access(new) - base
    return gains


def candidate_edges(
    graph: DiGraph, edits: EditSet, rewards: RewardSet, T: int, prune: bool = True
) -> list[Edge]:
    """Unused mask edges, restricted to heads within T-1 hops of a reward when pruning."""
    free = sorted(graph.mask - edits.additions)
    if not prune:
        return free
    dist = shortest_distance_to_reward(graph, rewards, edits)
    near = (dist != UNREACHABLE) & (dist <= T - 1)
    return [(u, v) for u, v in free if near[v]]


def geci_augment(
    graph: DiGraph,
    groups: Sequence[GroupSpec],
    rewards: RewardSet,
    B: int,
    T: int = 10,
    prune: bool = True,
) -> tuple[EditSet, GeciTrace]:
    if B < 0:
        raise ValueError(f"budget must be non-negative, got {B}")
    if not groups:
        raise ValueError("need at least one group")
    added: set[Edge] = set()
    trace = GeciTrace()
    for b in range(B):
        edits = EditSet(frozenset(added))
        utils = [exact_group_utility(graph, edits, rewards, g) for g in groups]
        worst = groups[int(np.argmin(utils))]
        cands = candidate_edges(graph, edits, rewards, T, prune)
        if not cands:
            trace.stopped_early = b < B and bool(graph.mask - added)
            break
        gains = score_candidates(graph, edits, rewards, worst, cands)
        best = gains.max()
        if best <= TIE_TOL:
            trace.stopped_early = True
            break
        # candidates are sorted, so the first near-maximal one is the lexicographic pick
        pick = cands[int(np.flatnonzero(gains >= best - TIE_TOL)[0])]
        added.add(pick)
        after = exact_group_utility(graph, EditSet(frozenset(added)), rewards, worst)
        trace.steps.append(GeciStep(b, worst.id, pick, float(min(utils)), after))
    return EditSet(frozenset(added)), trace
