import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from equiaug.graph import DiGraph, GroupSpec, RewardSet  # noqa: E402


def point(n: int, v: int) -> np.ndarray:
    mu = np.zeros(n)
    mu[v] = 1.0
    return mu


def random_graph(rng: np.random.Generator, n: int, p_edge: float = 0.25, p_mask: float = 0.3,
                 weighted_groups: int = 0) -> DiGraph:
    """Random directed graph, mask drawn from the non-edges, optional per-group weights."""
    edges, mask = set(), set()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            u = rng.random()
            if u < p_edge:
                edges.add((i, j))
            elif u < p_edge + p_mask * (1 - p_edge):
                mask.add((i, j))
    weights = {
        f"g{k}": {e: float(rng.uniform(0.2, 3.0)) for e in sorted(edges)} for k in range(weighted_groups)
    }
    return DiGraph(n, frozenset(edges), frozenset(mask), weights)


def random_distribution(rng: np.random.Generator, n: int) -> np.ndarray:
    w = rng.random(n) * (rng.random(n) < 0.6)
    if w.sum() == 0:
        w[rng.integers(n)] = 1.0
    return w / w.sum()


@pytest.fixture
def chain():
    """0 -> 1 -> 2 -> 3 with mask {(0,2), (1,3), (0,3)} and rewards {3}."""
    return DiGraph(4, frozenset({(0, 1), (1, 2), (2, 3)}), frozenset({(0, 2), (1, 3), (0, 3)}))


@pytest.fixture
def chain_groups():
    return [GroupSpec("A", point(4, 1)), GroupSpec("B", point(4, 0))]


@pytest.fixture
def reward3():
    return RewardSet((3,))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
