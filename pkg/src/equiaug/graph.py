"""Directed graph primitives: edge sets, candidate masks, hop distances and
group transition matrices."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

Edge = tuple[int, int]

# Marker stored in distance vectors for nodes with no path to any reward.
UNREACHABLE = -1

WEIGHT_RULES = ("degree-product", "inverse-degree-product", "uniform", "explicit")


class GraphError(ValueError):
    """Raised when a graph, group, or edit set violates its invariants."""


def _edge_array(pairs: Iterable[Edge]) -> np.ndarray:
    arr = np.array(sorted(pairs), dtype=np.int64)
    return arr.reshape(-1, 2)


@dataclass(frozen=True)
class DiGraph:
    """Immutable directed graph with a candidate-edge mask.

    ``mask`` holds the ordered pairs that may be added; it never overlaps
    ``edges``. ``group_weights`` maps a group id to a positive weight for
    every edge in ``edges`` (edges without an entry default to 1).
    """

    n: int
    edges: frozenset[Edge]
    mask: frozenset[Edge] = frozenset()
    group_weights: Mapping[str, Mapping[Edge, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError(f"node count must be positive, got {self.n}")
        object.__setattr__(self, "edges", frozenset((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(self, "mask", frozenset((int(i), int(j)) for i, j in self.mask))
        for i, j in self.edges | self.mask:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) has an endpoint outside [0, {self.n})")
        overlap = self.edges & self.mask
        if overlap:
            raise GraphError(f"mask overlaps existing edges: {sorted(overlap)[:5]}")
        frozen_weights = {}
        for gid, weights in self.group_weights.items():
            clean = {}
            for e, w in weights.items():
                e = (int(e[0]), int(e[1]))
                if e not in self.edges:
                    raise GraphError(f"group {gid!r} weights a non-edge {e}")
                if not w > 0:
                    raise GraphError(f"group {gid!r} has non-positive weight {w} on {e}")
                clean[e] = float(w)
            frozen_weights[gid] = clean
        object.__setattr__(self, "group_weights", frozen_weights)

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Edges as a sorted ``(m, 2)`` int array."""
        return _edge_array(self.edges)

    @cached_property
    def mask_array(self) -> np.ndarray:
        """Mask pairs as a sorted ``(|mask|, 2)`` int array; defines logit order."""
        return _edge_array(self.mask)

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of distinct neighbours (in or out) of every node.

        On a symmetrized graph this is the undirected degree.
        """
        und = {(min(i, j), max(i, j)) for i, j in self.edges if i != j}
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in und:
            deg[i] += 1
            deg[j] += 1
        return deg

    def with_edits(self, edits: "EditSet") -> "DiGraph":
        """Return the graph with ``edits`` merged into its edge set.

        Added edges leave the mask and carry unit weight for every group.
        """
        validate_edits(self, edits)
        weights = {gid: dict(w) for gid, w in self.group_weights.items()}
        for w in weights.values():
            for e in edits.additions:
                w[e] = 1.0
        return DiGraph(self.n, self.edges | edits.additions, self.mask - edits.additions, weights)


@dataclass(frozen=True, eq=False)
class GroupSpec:
    """A population group: a start distribution and a walk weighting rule."""

    id: str
    mu0: np.ndarray
    weight_rule: str = "uniform"

    def __post_init__(self):
        mu = np.asarray(self.mu0, dtype=float)
        if mu.ndim != 1:
            raise GraphError(f"group {self.id!r}: mu0 must be a vector")
        if (mu < 0).any():
            raise GraphError(f"group {self.id!r}: mu0 has negative entries")
        if abs(mu.sum() - 1.0) > 1e-9:
            raise GraphError(f"group {self.id!r}: mu0 sums to {mu.sum():.12g}, not 1")
        if self.weight_rule not in WEIGHT_RULES:
            raise GraphError(f"group {self.id!r}: unknown weight rule {self.weight_rule!r}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu0", mu)


@dataclass(frozen=True)
class RewardSet:
    nodes: tuple[int, ...]

    def __post_init__(self):
        nodes = tuple(int(v) for v in self.nodes)
        if not nodes:
            raise GraphError("reward set must be non-empty")
        if len(set(nodes)) != len(nodes):
            raise GraphError(f"duplicate reward nodes in {nodes}")
        object.__setattr__(self, "nodes", nodes)

    def check(self, n: int) -> None:
        bad = [v for v in self.nodes if not 0 <= v < n]
        if bad:
            raise GraphError(f"reward nodes {bad} outside [0, {n})")

    def indicator(self, n: int) -> np.ndarray:
        self.check(n)
        r = np.zeros(n)
        r[list(self.nodes)] = 1.0
        return r


@dataclass(frozen=True)
class EditSet:
    additions: frozenset[Edge] = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "additions", frozenset((int(i), int(j)) for i, j in self.additions)
        )

    def __len__(self) -> int:
        return len(self.additions)

    def sorted(self) -> list[Edge]:
        return sorted(self.additions)


def validate_edits(graph: DiGraph, edits: EditSet) -> None:
    dup = edits.additions & graph.edges
    if dup:
        raise GraphError(f"edits duplicate existing edges: {sorted(dup)[:5]}")
    outside = edits.additions - graph.mask
    if outside:
        raise GraphError(f"edits outside the candidate mask: {sorted(outside)[:5]}")


def hamming(a: EditSet, b: EditSet) -> int:
    return len(a.additions ^ b.additions)


def reverse_adjacency(n: int, edges: Iterable[Edge]) -> list[list[int]]:
    radj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        radj[j].append(i)
    return radj


def shortest_distance_to_reward(
    graph: DiGraph, rewards: RewardSet, edits: EditSet | None = None
) -> np.ndarray:
    """Hop count from every node to its nearest reward node.

    Multi-source BFS from the rewards over reversed edges of
    ``graph.edges | edits``. Nodes with no path get ``UNREACHABLE``.
    """
    edits = edits or EditSet()
    validate_edits(graph, edits)
    rewards.check(graph.n)
    radj = reverse_adjacency(graph.n, graph.edges | edits.additions)
    dist = np.full(graph.n, UNREACHABLE, dtype=np.int64)
    queue = deque()
    for r in rewards.nodes:
        dist[r] = 0
        queue.append(r)
    while queue:
        v = queue.popleft()
        for u in radj[v]:
            if dist[u] == UNREACHABLE:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def edge_weights(graph: DiGraph, group: GroupSpec) -> np.ndarray:
    """Per-edge walk weights for ``group``, aligned with ``graph.edge_array``."""
    stored = graph.group_weights.get(group.id)
    if stored is not None:
        return np.array([stored.get((int(i), int(j)), 1.0) for i, j in graph.edge_array])
    if group.weight_rule in ("uniform", "explicit"):
        if group.weight_rule == "explicit":
            raise GraphError(f"group {group.id!r} needs explicit weights but the graph has none")
        return np.ones(len(graph.edge_array))
    from .synth import assign_group_weights

    weights = assign_group_weights(graph, group.weight_rule)
    return np.array([weights[(int(i), int(j))] for i, j in graph.edge_array])


def weight_matrix(graph: DiGraph, group: GroupSpec) -> np.ndarray:
    """Dense ``n x n`` matrix of the group's weights on original edges."""
    W = np.zeros((graph.n, graph.n))
    e = graph.edge_array
    if len(e):
        W[e[:, 0], e[:, 1]] = edge_weights(graph, group)
    return W


def normalize_rows(W: np.ndarray) -> np.ndarray:
    """Row-normalize a non-negative weight matrix; empty rows become self-loops."""
    d = W.sum(axis=1)
    P = np.zeros_like(W)
    live = d > 0
    P[live] = W[live] / d[live, None]
    dead = np.flatnonzero(~live)
    P[dead, dead] = 1.0
    return P


def build_transition(
    graph: DiGraph, soft_edits: np.ndarray | None, group: GroupSpec
) -> np.ndarray:
    """Row-stochastic transition matrix under original edges plus soft edits.

    ``soft_edits`` is a dense ``n x n`` array with values in [0, 1] that is
    zero outside the mask; each entry adds that much unit weight.
    """
    W = weight_matrix(graph, group)
    if soft_edits is not None:
        soft = np.asarray(soft_edits, dtype=float)
        if soft.shape != (graph.n, graph.n):
            raise GraphError(f"soft edits must be {graph.n}x{graph.n}, got {soft.shape}")
        if (soft < 0).any():
            raise GraphError("soft edit values must be non-negative")
        support = np.zeros(soft.shape, dtype=bool)
        m = graph.mask_array
        if len(m):
            support[m[:, 0], m[:, 1]] = True
        if (soft[~support] != 0).any():
            raise GraphError("soft edits are non-zero outside the candidate mask")
        W = W + soft
    return normalize_rows(W)


def edits_matrix(graph: DiGraph, edits: EditSet) -> np.ndarray:
    """Dense 0/1 matrix of a discrete edit set, suitable as ``soft_edits``."""
    validate_edits(graph, edits)
    X = np.zeros((graph.n, graph.n))
    for i, j in edits.additions:
        X[i, j] = 1.0
    return X
