"""On-disk dataset bundles and spatial helpers for real-world studies.

A bundle is a JSON manifest naming plain CSV files, each with a one-line
header:

    edges        src,dst
    mask         src,dst
    groups       group_id,node,probability
    rewards      node
    coordinates  node,lat,lon                 (optional)
    weights      group_id,src,dst,weight      (optional)

The manifest also records ``n``, each group's weight rule, and an optional
``provenance`` object. File paths are relative to the manifest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import DiGraph, Edge, GraphError, GroupSpec, RewardSet

EARTH_RADIUS_M = 6_371_000.0
MIN_DISTANCE_M = 1.0
# Neighbour ranking rounds distances to this many decimals (meters), so
# geometrically equal distances tie exactly and fall back to node id.
TIE_DECIMALS = 6
NORMALIZE_TOL = 1e-6
# Sums this close to 1 are float rounding and are kept verbatim.
EXACT_TOL = 1e-9

FILE_HEADERS = {
    "edges": ["src", "dst"],
    "mask": ["src", "dst"],
    "groups": ["group_id", "node", "probability"],
    "rewards": ["node"],
    "coordinates": ["node", "lat", "lon"],
    "weights": ["group_id", "src", "dst", "weight"],
}


class DataError(ValueError):
    """Malformed or inconsistent bundle data."""


@dataclass(frozen=True)
class SpatialNode:
    node: int
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise DataError(f"node {self.node}: latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise DataError(f"node {self.node}: longitude {self.lon} outside [-180, 180]")


@dataclass
class DatasetBundle:
    graph: DiGraph
    groups: list[GroupSpec]
    rewards: RewardSet
    coordinates: dict[int, SpatialNode] | None = None
    provenance: dict = field(default_factory=dict)

    def same_as(self, other: "DatasetBundle") -> bool:
        g1, g2 = self.graph, other.graph
        if (g1.n, g1.edges, g1.mask, g1.group_weights) != (g2.n, g2.edges, g2.mask, g2.group_weights):
            return False
        if [(g.id, g.weight_rule) for g in self.groups] != [(g.id, g.weight_rule) for g in other.groups]:
            return False
        if any(not np.array_equal(a.mu0, b.mu0) for a, b in zip(self.groups, other.groups)):
            return False
        return self.rewards == other.rewards and self.coordinates == other.coordinates


def haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


# -- reading -------------------------------------------------------------------


def _read_rows(path: Path, kind: str):
    """Yield (line_number, row) after checking the header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {FILE_HEADERS[kind]}") from None
        if [h.strip() for h in header] != FILE_HEADERS[kind]:
            raise DataError(f"{path}:1: header {header} != {FILE_HEADERS[kind]}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(FILE_HEADERS[kind]):
                raise DataError(f"{path}:{reader.line_num}: expected {len(FILE_HEADERS[kind])} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _node(value: str, n: int, where: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise DataError(f"{where}: node id {value!r} is not an integer") from None
    if not 0 <= v < n:
        raise DataError(f"{where}: node {v} outside [0, {n})")
    return v


def _number(value: str, where: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"{where}: {value!r} is not a number") from None
    if not math.isfinite(x):
        raise DataError(f"{where}: non-finite value {value!r}")
    return x


def _read_pairs(path: Path, kind: str, n: int) -> frozenset[Edge]:
    pairs = set()
    for line, (a, b) in _read_rows(path, kind):
        where = f"{path}:{line}"
        pairs.add((_node(a, n, where), _node(b, n, where)))
    return frozenset(pairs)


def load_bundle(manifest_path: str | Path) -> DatasetBundle:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{manifest_path}: cannot read manifest ({exc})") from None
    root = manifest_path.parent
    files = manifest.get("files", {})
    for key in ("edges", "groups", "rewards"):
        if key not in files:
            raise DataError(f"{manifest_path}: manifest lacks files.{key}")
    if "n" not in manifest or not isinstance(manifest["n"], int) or manifest["n"] < 1:
        raise DataError(f"{manifest_path}: manifest needs a positive integer 'n'")
    n = manifest["n"]

    edges = _read_pairs(root / files["edges"], "edges", n)
    mask = _read_pairs(root / files["mask"], "mask", n) if "mask" in files else frozenset()

    weights: dict[str, dict[Edge, float]] = {}
    if "weights" in files:
        path = root / files["weights"]
        for line, (gid, a, b, w) in _read_rows(path, "weights"):
            where = f"{path}:{line}"
            e = (_node(a, n, where), _node(b, n, where))
            if e not in edges:
                raise DataError(f"{where}: weight on {e}, which is not an edge")
            weights.setdefault(gid, {})[e] = _number(w, where)

    dists: dict[str, np.ndarray] = {}
    path = root / files["groups"]
    for line, (gid, v, p) in _read_rows(path, "groups"):
        where = f"{path}:{line}"
        node = _node(v, n, where)
        prob = _number(p, where)
        if prob < 0:
            raise DataError(f"{where}: negative probability {prob}")
        dists.setdefault(gid, np.zeros(n))[node] += prob
    rules = manifest.get("group_rules", {})
    groups = []
    for gid, mu in dists.items():
        total = mu.sum()
        if abs(total - 1.0) > NORMALIZE_TOL:
            raise DataError(f"{path}: group {gid!r} probabilities sum to {total!r}")
        rule = rules.get(gid, "explicit" if gid in weights else "uniform")
        if abs(total - 1.0) > EXACT_TOL:
            mu = mu / total
        try:
            groups.append(GroupSpec(gid, mu, rule))
        except GraphError as exc:
            raise DataError(f"{path}: {exc}") from None

    path = root / files["rewards"]
    nodes = [_node(v, n, f"{path}:{line}") for line, (v,) in _read_rows(path, "rewards")]

    coords = None
    if "coordinates" in files:
        path = root / files["coordinates"]
        coords = {}
        for line, (v, lat, lon) in _read_rows(path, "coordinates"):
            where = f"{path}:{line}"
            node = _node(v, n, where)
            coords[node] = SpatialNode(node, _number(lat, where), _number(lon, where))

    try:
        graph = DiGraph(n, edges, mask, weights)
        rewards = RewardSet(tuple(nodes))
    except GraphError as exc:
        raise DataError(f"{manifest_path}: {exc}") from None
    return DatasetBundle(graph, groups, rewards, coords, manifest.get("provenance", {}))


# -- writing -------------------------------------------------------------------


def _write(path: Path, kind: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FILE_HEADERS[kind])
        w.writerows(rows)


def save_bundle(bundle: DatasetBundle, directory: str | Path, provenance: dict | None = None) -> Path:
    """Write the bundle's CSVs and ``manifest.json``; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    files = {"edges": "edges.csv", "mask": "mask.csv", "groups": "groups.csv", "rewards": "rewards.csv"}
    _write(out / "edges.csv", "edges", sorted(g.edges))
    _write(out / "mask.csv", "mask", sorted(g.mask))
    group_rows = []
    for grp in bundle.groups:
        for v in np.flatnonzero(grp.mu0 > 0):
            group_rows.append([grp.id, int(v), repr(float(grp.mu0[v]))])
    _write(out / "groups.csv", "groups", group_rows)
    _write(out / "rewards.csv", "rewards", [[v] for v in bundle.rewards.nodes])
    if g.group_weights:
        files["weights"] = "weights.csv"
        rows = [
            [gid, i, j, repr(w)]
            for gid in g.group_weights
            for (i, j), w in sorted(g.group_weights[gid].items())
        ]
        _write(out / "weights.csv", "weights", rows)
    if bundle.coordinates is not None:
        files["coordinates"] = "coordinates.csv"
        rows = [[c.node, repr(c.lat), repr(c.lon)] for _, c in sorted(bundle.coordinates.items())]
        _write(out / "coordinates.csv", "coordinates", rows)
    manifest = {
        "n": g.n,
        "files": files,
        "group_rules": {grp.id: grp.weight_rule for grp in bundle.groups},
        "provenance": provenance if provenance is not None else bundle.provenance,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- spatial helpers ---------------------------------------------------------------


def attach_facilities(
    graph: DiGraph,
    coordinates: dict[int, SpatialNode],
    facilities: list[tuple[float, float]],
    k_nn: int = 2,
) -> tuple[DiGraph, RewardSet]:
    """Add each facility as a new node linked both ways to its ``k_nn``
    nearest transport nodes by great-circle distance (ties by node id).

    The new nodes, numbered from ``graph.n``, form the returned reward set.
    """
    if k_nn < 1:
        raise ValueError("k_nn must be >= 1")
    if len(coordinates) < k_nn:
        raise DataError(f"need at least {k_nn} transport nodes with coordinates, have {len(coordinates)}")
    if not facilities:
        raise DataError("no facilities to attach")
    nodes = sorted(coordinates)
    edges = set(graph.edges)
    new_nodes = []
    for f, (lat, lon) in enumerate(facilities):
        SpatialNode(-1, lat, lon)
        fid = graph.n + f
        ranked = sorted(
            nodes,
            key=lambda v: (round(haversine(lat, lon, coordinates[v].lat, coordinates[v].lon), TIE_DECIMALS), v),
        )
        for v in ranked[:k_nn]:
            edges.add((fid, v))
            edges.add((v, fid))
        new_nodes.append(fid)
    augmented = DiGraph(graph.n + len(facilities), frozenset(edges), graph.mask, graph.group_weights)
    return augmented, RewardSet(tuple(new_nodes))


def extend_distribution(mu: np.ndarray, n: int) -> np.ndarray:
    """Pad a start distribution with zero mass for nodes appended after it."""
    out = np.zeros(n)
    out[: len(mu)] = mu
    return out


def distance_weighting(
    graph: DiGraph, coordinates: dict[int, SpatialNode], normalize: bool = False
) -> dict[Edge, float]:
    """w = 1 / max(distance in meters, 1 m) on every edge."""
    weights = {}
    for i, j in sorted(graph.edges):
        if i not in coordinates or j not in coordinates:
            raise DataError(f"edge ({i}, {j}) lacks coordinates on an endpoint")
        a, b = coordinates[i], coordinates[j]
        weights[(i, j)] = 1.0 / max(haversine(a.lat, a.lon, b.lat, b.lon), MIN_DISTANCE_M)
    if normalize and weights:
        mean = sum(weights.values()) / len(weights)
        weights = {e: w / mean for e, w in weights.items()}
    return weights
