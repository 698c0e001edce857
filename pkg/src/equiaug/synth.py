"""Synthetic graph ensembles (ER, PA, CL, SBM) with degree-biased group
weights, degree-biased reward placement and uniform particle placement."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np

from .graph import DiGraph, Edge, GraphError, GroupSpec, RewardSet

KINDS = ("ER", "PA", "CL", "SBM")


class ConfigError(ValueError):
    """Invalid experiment or ensemble configuration; ``path`` names the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class EnsembleConfig:
    kind: str
    n: int
    seed: int
    p: float = 0.05
    m: int = 2
    triangle_p: float = 0.3
    gamma_deg: float = 2.0
    block_probs: tuple[tuple[float, ...], ...] = ((0.1, 0.01), (0.01, 0.1))

    def __post_init__(self):
        object.__setattr__(
            self, "block_probs", tuple(tuple(float(x) for x in row) for row in self.block_probs)
        )
        self.validate()

    @property
    def clusters(self) -> int:
        return len(self.block_probs)

    def validate(self, prefix: str = "ensemble") -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"{prefix}.kind", f"must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise ConfigError(f"{prefix}.n", f"need an integer >= 2, got {self.n!r}")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"{prefix}.seed", f"need an unsigned 64-bit integer, got {self.seed!r}")
        for name in ("p", "triangle_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{prefix}.{name}", f"probability out of [0, 1]: {v}")
        if self.kind == "PA" and not 1 <= self.m < self.n:
            raise ConfigError(f"{prefix}.m", f"PA needs 1 <= m < n, got m={self.m}, n={self.n}")
        if self.kind == "CL" and self.gamma_deg < 0:
            raise ConfigError(f"{prefix}.gamma_deg", "power-law exponent must be >= 0")
        if self.kind == "SBM":
            M = len(self.block_probs)
            if M < 1 or any(len(row) != M for row in self.block_probs):
                raise ConfigError(f"{prefix}.block_probs", "must be a square M x M matrix")
            if any(not 0.0 <= x <= 1.0 for row in self.block_probs for x in row):
                raise ConfigError(f"{prefix}.block_probs", "entries must lie in [0, 1]")
            if M > self.n:
                raise ConfigError(f"{prefix}.block_probs", f"{M} clusters exceed n={self.n}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_probs"] = [list(row) for row in self.block_probs]
        return d


def cluster_sizes(n: int, clusters: int) -> list[int]:
    base, extra = divmod(n, clusters)
    return [base + (1 if c < extra else 0) for c in range(clusters)]


def cluster_labels(n: int, clusters: int) -> np.ndarray:
    return np.repeat(np.arange(clusters), cluster_sizes(n, clusters))


def powerlaw_degree_sequence(n: int, gamma_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` degrees from P(k) ~ k^-gamma on the support [1, n-1]."""
    support = np.arange(1, max(n - 1, 1) + 1, dtype=float)
    prob = support**-gamma_deg
    prob /= prob.sum()
    return np.clip(rng.choice(support, size=n, p=prob), 1, max(n - 1, 1))


def _undirected(config: EnsembleConfig) -> nx.Graph:
    n, seed = config.n, int(config.seed)
    if config.kind == "ER":
        return nx.gnp_random_graph(n, config.p, seed=seed)
    if config.kind == "PA":
        return nx.powerlaw_cluster_graph(n, config.m, config.triangle_p, seed=seed)
    if config.kind == "CL":
        rng = np.random.default_rng(seed)
        degrees = powerlaw_degree_sequence(n, config.gamma_deg, rng)
        # expected_degree_graph draws from its own stream; offset the seed so the
        # degree draws and the edge draws are not correlated.
        return nx.expected_degree_graph(
            degrees.tolist(), seed=(seed + 0x9E3779B9) % 2**32, selfloops=False
        )
    sizes = cluster_sizes(n, config.clusters)
    probs = [list(row) for row in config.block_probs]
    return nx.stochastic_block_model(sizes, probs, seed=seed, selfloops=False)


def complement_mask(n: int, edges: frozenset[Edge]) -> frozenset[Edge]:
    """Every ordered non-edge pair (no self-loops)."""
    return frozenset(
        (i, j) for i in range(n) for j in range(n) if i != j and (i, j) not in edges
    )


def generate(config: EnsembleConfig, mask: str = "complement") -> DiGraph:
    """Sample one ensemble member and symmetrize it into a directed graph.

    ``mask`` is ``"complement"`` (all ordered non-edges) or ``"none"``.
    """
    config.validate()
    und = _undirected(config)
    if config.kind == "CL":
        und.remove_edges_from(nx.selfloop_edges(und))
    edges = set()
    for i, j in und.edges():
        if i != j:
            edges.add((int(i), int(j)))
            edges.add((int(j), int(i)))
    edges = frozenset(edges)
    if mask == "complement":
        cand = complement_mask(config.n, edges)
    elif mask == "none":
        cand = frozenset()
    else:
        raise ConfigError("mask", f"unknown mask policy {mask!r}")
    return DiGraph(config.n, edges, cand)


def assign_group_weights(
    graph: DiGraph, rule: str, normalize: bool = False
) -> dict[Edge, float]:
    """Walk weights from node degrees.

    ``degree-product`` gives w = deg(i) * deg(j), ``inverse-degree-product``
    its reciprocal, ``uniform`` ones. With ``normalize`` the weights are
    rescaled to mean 1, which keeps walk probabilities unchanged while
    putting original edges on the same scale as unit-weight added edges.
    """
    deg = graph.degree.astype(float)
    e = graph.edge_array
    if len(e) == 0:
        return {}
    prod = deg[e[:, 0]] * deg[e[:, 1]]
    if rule == "degree-product":
        w = prod
    elif rule == "inverse-degree-product":
        w = 1.0 / prod
    elif rule == "uniform":
        w = np.ones(len(e))
    else:
        raise GraphError(f"cannot derive weights for rule {rule!r}")
    if normalize:
        w = w / w.mean()
    return {(int(i), int(j)): float(x) for (i, j), x in zip(e, w)}


def place_rewards(graph: DiGraph, k: int, mode: str, seed: int) -> RewardSet:
    """Sample ``k`` distinct reward nodes with degree-biased probabilities.

    ``high-degree`` draws proportionally to degree and ``low-degree``
    proportionally to inverse degree. Draws are sequential with the
    remaining weights renormalized. Isolated nodes carry zero weight unless
    nothing else is left.
    """
    if not 1 <= k <= graph.n:
        raise GraphError(f"need 1 <= k <= n, got k={k}, n={graph.n}")
    deg = graph.degree.astype(float)
    if mode == "high-degree":
        w = deg.copy()
    elif mode == "low-degree":
        w = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
    else:
        raise GraphError(f"unknown reward mode {mode!r}")
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    avail = np.ones(graph.n, dtype=bool)
    for _ in range(k):
        ww = np.where(avail, w, 0.0)
        if ww.sum() <= 0:
            ww = avail.astype(float)
        v = int(rng.choice(graph.n, p=ww / ww.sum()))
        chosen.append(v)
        avail[v] = False
    return RewardSet(tuple(chosen))


def random_initial_distribution(graph: DiGraph, seed: int | None = None) -> np.ndarray:
    # Uniform placement; ``seed`` is accepted for interface symmetry.
    return np.full(graph.n, 1.0 / graph.n)


def cluster_distribution(n: int, clusters: int, cluster: int) -> np.ndarray:
    labels = cluster_labels(n, clusters)
    mu = (labels == cluster).astype(float)
    return mu / mu.sum()


@dataclass
class SyntheticInstance:
    graph: DiGraph
    groups: list[GroupSpec]
    rewards: RewardSet
    config: EnsembleConfig
    reward_mode: str
    extras: dict = field(default_factory=dict)


def synthetic_instance(
    config: EnsembleConfig,
    k: int = 3,
    reward_mode: str = "high-degree",
    reward_seed: int | None = None,
    mask: str = "complement",
) -> SyntheticInstance:
    """Graph, two degree-biased groups and rewards for one synthetic problem.

    The ``black`` group walks with degree-product weights and the ``red``
    group with inverse-degree-product weights. Both start uniformly, except
    on SBM graphs where each group starts inside its own cluster (black in
    cluster 0, red in the last cluster).
    """
    base = generate(config, mask=mask)
    weights = {
        "black": assign_group_weights(base, "degree-product", normalize=True),
        "red": assign_group_weights(base, "inverse-degree-product", normalize=True),
    }
    graph = DiGraph(base.n, base.edges, base.mask, weights)
    if config.kind == "SBM" and config.clusters > 1:
        mu_black = cluster_distribution(config.n, config.clusters, 0)
        mu_red = cluster_distribution(config.n, config.clusters, config.clusters - 1)
    else:
        mu_black = random_initial_distribution(graph)
        mu_red = random_initial_distribution(graph)
    groups = [
        GroupSpec("black", mu_black, "degree-product"),
        GroupSpec("red", mu_red, "inverse-degree-product"),
    ]
    rseed = (config.seed + 1) % 2**64 if reward_seed is None else reward_seed
    rewards = place_rewards(graph, k, reward_mode, rseed)
    return SyntheticInstance(graph, groups, rewards, config, reward_mode)
