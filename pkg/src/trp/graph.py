"""Insertion-only temporal graph store and positive/unlabeled pair sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ContractViolation

POSITIVE = "positive"
UNLABELED = "unlabeled"


@dataclass(frozen=True)
class PairSample:
    """Canonical node pair (i < j) at time step t with observation flag."""
    i: int
    j: int
    t: int
    observed: bool

    def __post_init__(self):
        if self.i == self.j:
            raise ContractViolation("self-pairs are not allowed")
        if self.i > self.j:
            raise ContractViolation("pairs must be stored with i < j")


@dataclass
class Graphlet:
    """One window: node count, adjacency, per-node features."""
    num_nodes: int
    adjacency: list  # list[np.ndarray] of sorted neighbor indices
    edges: set       # set[(i, j)] with i < j
    features: np.ndarray  # [num_nodes, feat_dim]


class TemporalGraph:
    """Ordered sequence of monotone graphlets over a shared node registry.

    Windows are 1-indexed in the public API, matching the time index of
    pair samples. Once appended, a window is immutable.
    """

    def __init__(self, feature_dim: int):
        self.feature_dim = feature_dim
        self.node_ids: list[str] = []
        self.node_index: dict[str, int] = {}
        self.categories: list[str] = []
        self.windows: list[Graphlet] = []

    @property
    def num_windows(self) -> int:
        return len(self.windows)

    def register_node(self, node_id: str, category: str = "other") -> int:
        idx = self.node_index.get(node_id)
        if idx is None:
            idx = len(self.node_ids)
            self.node_index[node_id] = idx
            self.node_ids.append(node_id)
            self.categories.append(category)
        return idx

    def add_snapshot(self, new_nodes, new_edges, features: np.ndarray) -> None:
        """Append one window; node and edge sets grow monotonically.

        new_nodes: iterable of (node_id, category) or node_id strings for
        nodes first appearing in this window. new_edges: (i, j) index pairs
        or (id_a, id_b) string pairs newly observed by this window.
        features: [num_nodes_after, feature_dim] rows for every node.
        """
        prev = self.windows[-1] if self.windows else None
        for node in new_nodes:
            node_id, category = node if isinstance(node, tuple) else (node, "other")
            if node_id in self.node_index and prev is not None \
                    and self.node_index[node_id] < prev.num_nodes:
                continue
            self.register_node(node_id, category)
        n = len(self.node_ids)
        edges = set(prev.edges) if prev else set()
        for a, b in new_edges:
            if isinstance(a, str):
                a = self.node_index.get(a)
                b = self.node_index.get(b)
            if a is None or b is None or not (0 <= a < n and 0 <= b < n):
                raise ContractViolation(f"edge references unknown node: {(a, b)}")
            if a == b:
                raise ContractViolation("self-loops are not allowed")
            edges.add((min(a, b), max(a, b)))
        if prev is not None and not prev.edges <= edges:
            raise ContractViolation("edge removal violates the insertion-only contract")
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (n, self.feature_dim):
            raise ContractViolation(
                f"features must be {(n, self.feature_dim)}, got {features.shape}")
        adj = [[] for _ in range(n)]
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        adjacency = [np.array(sorted(nbrs), dtype=np.intp) for nbrs in adj]
        self.windows.append(Graphlet(n, adjacency, edges, features))

    def window(self, t: int) -> Graphlet:
        if not 1 <= t <= len(self.windows):
            raise ContractViolation(f"window {t} out of range 1..{len(self.windows)}")
        return self.windows[t - 1]

    def has_edge(self, t: int, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.window(t).edges

    # -- sampling and labels ------------------------------------------------

    def sample_neighbors(self, t: int, node: int, size: int, rng) -> np.ndarray:
        """Fixed-size uniform neighbor sample on window t.

        Degree >= size: without replacement; 0 < degree < size: with
        replacement; isolated node: empty.
        """
        g = self.window(t)
        if not 0 <= node < g.num_nodes:
            raise ContractViolation(f"unknown node {node} in window {t}")
        if size < 1:
            raise ContractViolation("size must be >= 1")
        nbrs = g.adjacency[node]
        if len(nbrs) == 0:
            return np.empty(0, dtype=np.intp)
        if len(nbrs) >= size:
            return rng.choice(nbrs, size=size, replace=False)
        return rng.choice(nbrs, size=size, replace=True)

    def pair_label(self, t: int, pair: tuple[int, int]) -> str:
        """Positive iff the pair is linked in E^{t+1}; the final step reuses
        the previous step's labels (training-time consistency)."""
        T = self.num_windows
        if not 1 <= t <= T:
            raise ContractViolation(f"t={t} out of range 1..{T}")
        label_window = t + 1 if t < T else T
        i, j = min(pair), max(pair)
        return POSITIVE if (i, j) in self.window(label_window).edges else UNLABELED

    def build_training_pairs(self, t: int, n_unlabeled: int, seed: int
                             ) -> tuple[list[PairSample], bool]:
        """All positive pairs at step t plus uniformly sampled non-edges of
        G^{t+1}. Returns (pairs, exhausted) where exhausted is True when
        fewer than n_unlabeled non-edges exist."""
        T = self.num_windows
        if not 1 <= t < T:
            raise ContractViolation(f"t={t} must satisfy 1 <= t < T={T}")
        if n_unlabeled < 0:
            raise ContractViolation("n_unlabeled must be >= 0")
        nxt = self.window(t + 1)
        positives = [PairSample(i, j, t, True) for i, j in sorted(nxt.edges)]
        n = nxt.num_nodes
        total_pairs = n * (n - 1) // 2
        available = total_pairs - len(nxt.edges)
        rng = np.random.default_rng(seed)
        exhausted = n_unlabeled > available
        if exhausted or n_unlabeled > available // 2:
            # Dense regime: enumerate all non-edges and subsample.
            non_edges = [(i, j) for i in range(n) for j in range(i + 1, n)
                         if (i, j) not in nxt.edges]
            if not exhausted:
                idx = rng.choice(len(non_edges), size=n_unlabeled, replace=False)
                non_edges = [non_edges[k] for k in sorted(idx)]
        else:
            non_edges_set: set[tuple[int, int]] = set()
            while len(non_edges_set) < n_unlabeled:
                a = rng.integers(0, n, size=n_unlabeled)
                b = rng.integers(0, n, size=n_unlabeled)
                for x, y in zip(a, b):
                    if x == y:
                        continue
                    p = (min(x, y), max(x, y))
                    if p not in nxt.edges:
                        non_edges_set.add((int(p[0]), int(p[1])))
                        if len(non_edges_set) == n_unlabeled:
                            break
            non_edges = sorted(non_edges_set)
        unlabeled = [PairSample(i, j, t, False) for i, j in non_edges]
        return positives + unlabeled, exhausted

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir) -> None:
        """JSON manifest plus one binary float64-LE feature block per window."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "feature_dim": self.feature_dim,
            "node_ids": self.node_ids,
            "categories": self.categories,
            "windows": [],
        }
        for t, g in enumerate(self.windows, start=1):
            blob = f"features_{t:03d}.bin"
            np.ascontiguousarray(g.features, dtype="<f8").tofile(out / blob)
            manifest["windows"].append({
                "num_nodes": g.num_nodes,
                "edges": sorted([int(a), int(b)] for a, b in g.edges),
                "features": blob,
            })
        (out / "graph.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=1))

    @classmethod
    def load(cls, in_dir) -> "TemporalGraph":
        src = Path(in_dir)
        manifest = json.loads((src / "graph.json").read_text())
        graph = cls(manifest["feature_dim"])
        prev_nodes = 0
        prev_edges: set = set()
        for t, w in enumerate(manifest["windows"], start=1):
            n = w["num_nodes"]
            new_nodes = [
                (manifest["node_ids"][k], manifest["categories"][k])
                for k in range(prev_nodes, n)
            ]
            edges = {(a, b) for a, b in w["edges"]}
            features = np.fromfile(src / w["features"], dtype="<f8")
            features = features.reshape(n, manifest["feature_dim"])
            graph.add_snapshot(new_nodes, sorted(edges - prev_edges), features)
            prev_nodes, prev_edges = n, edges
        return graph

    def truncated(self, t: int) -> "TemporalGraph":
        """A view-copy holding only windows 1..t (for incremental evaluation)."""
        sub = TemporalGraph(self.feature_dim)
        prev_nodes = 0
        prev_edges: set = set()
        for w in range(1, t + 1):
            g = self.window(w)
            new_nodes = [(self.node_ids[k], self.categories[k])
                         for k in range(prev_nodes, g.num_nodes)]
            sub.add_snapshot(new_nodes, sorted(g.edges - prev_edges), g.features)
            prev_nodes, prev_edges = g.num_nodes, g.edges
        return sub


def load_feature_matrix(path) -> np.ndarray:
    """Per-window feature file: header line `node_count dim`, then rows."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: expected header 'node_count dim'")
        n, dim = int(header[0]), int(header[1])
        rows = np.loadtxt(fh, ndmin=2) if n else np.zeros((0, dim))
    if rows.shape != (n, dim):
        raise ValueError(f"{path}: body shape {rows.shape} does not match header {(n, dim)}")
    return rows


def from_edge_list(rows: list[tuple[str, str, int]],
                   features: list[np.ndarray]) -> TemporalGraph:
    """Assemble a TemporalGraph from TSV edge rows and per-window feature
    matrices. Node order follows first appearance by window then name;
    each feature matrix must cover the nodes present by that window."""
    if not features:
        raise ValueError("at least one feature matrix is required")
    num_windows = len(features)
    feature_dim = features[0].shape[1]
    first_seen: dict[str, int] = {}
    per_window_edges: dict[int, set] = {t: set() for t in range(1, num_windows + 1)}
    for a, b, t in rows:
        if not 1 <= t <= num_windows:
            raise ValueError(f"edge window {t} outside 1..{num_windows}")
        per_window_edges[t].add((min(a, b), max(a, b)))
        for term in (a, b):
            if term not in first_seen or t < first_seen[term]:
                first_seen[term] = t
    order = sorted(first_seen, key=lambda term: (first_seen[term], term))
    graph = TemporalGraph(feature_dim)
    for t in range(1, num_windows + 1):
        new_nodes = [term for term in order if first_seen[term] == t]
        graph.add_snapshot(new_nodes, sorted(per_window_edges[t]), features[t - 1])
    return graph


def load_edge_tsv(path) -> list[tuple[str, str, int]]:
    """Edge-list TSV: term_a <tab> term_b <tab> window_index."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
            rows.append((parts[0], parts[1], int(parts[2])))
    return rows
