"""Slow, independent reference implementations used to check the package.

None of these share code paths with the library beyond its data types.
"""

from __future__ import annotations

import itertools

import numpy as np


def path_distances(n: int, edges, rewards) -> list[float]:
    """Minimum hop count to any reward by enumerating simple paths (DFS)."""
    out = [float(n * n) for _ in range(n)]
    succ = {i: sorted(j for a, j in edges if a == i) for i in range(n)}
    targets = set(rewards)

    def dfs(v, depth, seen, origin):
        if v in targets:
            out[origin] = min(out[origin], depth)
            return
        for w in succ[v]:
            if w not in seen:
                dfs(w, depth + 1, seen | {w}, origin)

    for s in range(n):
        dfs(s, 0, {s}, s)
    return [d if d < n * n else np.inf for d in out]


def inverse_distance_utility(n, edges, rewards, mu) -> float:
    total = 0.0
    for v, d in enumerate(path_distances(n, edges, rewards)):
        if d == 0:
            total += mu[v]
        elif np.isfinite(d):
            total += mu[v] / d
    return total


def pairwise_gini(x) -> float:
    x = [float(v) for v in x]
    n = len(x)
    mean = sum(x) / n
    if mean == 0:
        return 0.0
    return sum(abs(a - b) for a in x for b in x) / (2 * n * n * mean)


def best_single_edge(n, edges, rewards, mu, candidates):
    """Brute force: candidate with the largest utility, first in order on ties."""
    best, best_u = None, -1.0
    for e in candidates:
        u = inverse_distance_utility(n, set(edges) | {e}, rewards, mu)
        if u > best_u + 1e-12:
            best, best_u = e, u
    return best, best_u


def transition_oracle(n, edges, weights, soft_edits) -> np.ndarray:
    """Row-normalize base weights plus soft edits, entry by entry."""
    P = np.zeros((n, n))
    for i in range(n):
        row = {}
        for a, b in edges:
            if a == i:
                row[b] = row.get(b, 0.0) + weights.get((a, b), 1.0)
        for (a, b), x in soft_edits.items():
            if a == i:
                row[b] = row.get(b, 0.0) + x
        total = sum(row.values())
        if total <= 0:
            P[i, i] = 1.0
        else:
            for b, w in row.items():
                P[i, b] = w / total
    return P


def matrix_power_value(P, R, s0, T, gamma, absorbing_rows=()) -> float:
    Q = np.array(P, dtype=float)
    for r in absorbing_rows:
        Q[r] = 0.0
    return float(sum(gamma**t * s0 @ np.linalg.matrix_power(Q, t) @ R for t in range(T)))


def augmented_loss(values, mass, B, mu_e, lam_e, mu_b, lam_b) -> float:
    v = np.asarray(values, dtype=float)
    dev = sum(abs(x - v.mean()) for x in v)
    exc = max(0.0, mass - B)
    return -v.sum() + mu_e * dev**2 + lam_e * dev + mu_b * exc**2 + lam_b * exc


def mrp_loss(graph, groups, rewards, theta, noise, tau, T, gamma, absorbing, B, mu_e, lam_e, mu_b, lam_b):
    """The full relaxed objective built from scratch with dict-based transitions."""
    z = theta + noise
    x = 1.0 / (1.0 + np.exp(-z / tau))
    mask = sorted(graph.mask)
    soft = {e: float(xe) for e, xe in zip(mask, x)}
    R = np.zeros(graph.n)
    R[list(rewards.nodes)] = 1.0
    values = []
    for g in groups:
        w = dict(graph.group_weights.get(g.id, {}))
        P = transition_oracle(graph.n, graph.edges, w, soft)
        rows = rewards.nodes if absorbing else ()
        values.append(matrix_power_value(P, R, g.mu0, T, gamma, rows))
    return augmented_loss(values, float(x.sum()), B, mu_e, lam_e, mu_b, lam_b)


def central_difference(f, theta, h=1e-5) -> np.ndarray:
    g = np.zeros_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        g[k] = (f(tp) - f(tm)) / (2 * h)
    return g


def subsets(items, max_size):
    for r in range(max_size + 1):
        yield from itertools.combinations(items, r)
