"""The pair-scoring networks: neighborhood aggregator, recurrent pair
update (GRU), and the affine classifier head.

Scoring a batch of pairs at time t walks windows 1..t, aggregates both
endpoints on each window, and feeds the elementwise-max combination of
the two endpoint summaries through the GRU state update. The classifier
maps the final pair state to a raw real score (threshold at 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractViolation, Tensor, concat, maximum
from .graph import TemporalGraph


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ModelConfig:
    feature_dim: int
    dim: int = 128
    sample_sizes: tuple[int, ...] = (20, 10)
    aggregator: str = "mean"  # mean | maxpool

    def __post_init__(self):
        if self.aggregator not in ("mean", "maxpool"):
            raise ContractViolation(f"unknown aggregator {self.aggregator!r}")
        if len(self.sample_sizes) < 1:
            raise ContractViolation("at least one aggregation layer is required")


class ModelParams:
    """Named trainable tensors for the three parameter sets.

    Aggregator layer m transforms concat(self, neighbor summary) of the
    previous depth; hidden layers are rectified, the last is linear.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d, f = config.dim, config.feature_dim
        self.tensors: dict[str, Tensor] = {}
        dims = [f] + [d] * len(config.sample_sizes)
        for m in range(len(config.sample_sizes)):
            self._add(f"agg.w{m}", _glorot(rng, 2 * dims[m], dims[m + 1]))
            self._add(f"agg.b{m}", np.zeros(dims[m + 1]))
        for gate in ("update", "reset", "cand"):
            self._add(f"gru.w_{gate}", _glorot(rng, d, d))
            self._add(f"gru.u_{gate}", _glorot(rng, d, d))
            self._add(f"gru.b_{gate}", np.zeros(d))
        self._add("clf.w", _glorot(rng, d, 1).reshape(d))
        self._add("clf.b", np.zeros(()))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = Tensor(value, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.tensors.items():
            if k not in state or state[k].shape != v.data.shape:
                raise ContractViolation(f"checkpoint tensor {k!r} missing or mis-shaped")
            v.data = state[k].copy()

    def manifest(self) -> dict:
        c = self.config
        return {"dim": c.dim, "feature_dim": c.feature_dim,
                "sample_sizes": list(c.sample_sizes), "aggregator": c.aggregator}

    @classmethod
    def from_manifest(cls, manifest: dict, state: dict[str, np.ndarray]) -> "ModelParams":
        config = ModelConfig(feature_dim=manifest["feature_dim"], dim=manifest["dim"],
                             sample_sizes=tuple(manifest["sample_sizes"]),
                             aggregator=manifest["aggregator"])
        params = cls(config)
        params.load_state_dict(state)
        return params


def _sample_tree(graph: TemporalGraph, t: int, nodes: np.ndarray,
                 sizes: tuple[int, ...], seed_key: tuple) -> list[np.ndarray]:
    """Sampled neighborhood levels: level 0 is `nodes`, level m holds
    sizes[m-1] sampled neighbors per level m-1 slot (index -1 marks an
    empty slot whose parent had no neighbors).

    Draws are cached per node in sorted-node order, so a node's sample
    depends only on (seed_key, level, unique node set), keeping scores
    symmetric under endpoint swap and independent of slot order.
    """
    levels = [np.asarray(nodes, dtype=np.intp)]
    for depth, size in enumerate(sizes, start=1):
        parents = levels[-1]
        rng = np.random.default_rng(seed_key + (depth,))
        cache = {node: graph.sample_neighbors(t, node, size, rng)
                 for node in sorted({int(x) for x in parents if x >= 0})}
        child = np.full((parents.size, size), -1, dtype=np.intp)
        for k, node in enumerate(parents):
            if node < 0:
                continue
            sample = cache[int(node)]
            if sample.size:
                child[k, :sample.size] = sample
        levels.append(child.reshape(-1))
    return levels


def _gather_features(features: Tensor, indices: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Feature rows for a level; empty slots (-1) become zero rows."""
    safe = np.where(indices < 0, 0, indices)
    rows = features.take_rows(safe)
    mask = (indices >= 0).astype(np.float64)[:, None]
    return rows * Tensor(mask), mask


def aggregate_batch(graph: TemporalGraph, t: int, nodes: np.ndarray,
                    params: ModelParams, seed_key: tuple) -> Tensor:
    """Sample-then-aggregate for a batch of nodes on window t; returns a
    [len(nodes), dim] tensor. Entries of -1 are cold nodes: zero features,
    empty neighborhood."""
    config = params.config
    sizes = config.sample_sizes
    depth = len(sizes)
    features = Tensor(graph.window(t).features)
    levels = _sample_tree(graph, t, nodes, sizes, seed_key)
    reps = []
    masks = []
    for level in levels:
        rep, mask = _gather_features(features, level)
        reps.append(rep)
        masks.append(mask)
    # Collapse from the deepest level inward; after step m, reps[l] holds
    # depth-(m+1) representations for levels 0..depth-m-1.
    for m in range(depth):
        w, b = params[f"agg.w{m}"], params[f"agg.b{m}"]
        new_reps = []
        for level in range(depth - m):
            self_rep = reps[level]
            child = reps[level + 1]
            child_mask = masks[level + 1]
            size = sizes[level]
            n = self_rep.data.shape[0]
            width = child.data.shape[1]
            grouped = child.reshape(n, size, width)
            if config.aggregator == "mean":
                counts = child_mask.reshape(n, size).sum(axis=1)
                denom = np.maximum(counts, 1.0)[:, None]
                summary = grouped.sum(axis=1) * Tensor(1.0 / denom)
            else:
                summary = grouped.max(axis=1)
            h = concat([self_rep, summary], axis=1) @ w + b
            if m < depth - 1:
                h = h.relu()
            # Empty slots must stay zero so they add nothing upstream.
            h = h * Tensor(masks[level])
            new_reps.append(h)
        reps = new_reps
        masks = masks[:depth - m]
    return reps[0]


def aggregate(graph: TemporalGraph, t: int, node: int, params: ModelParams,
              seed: int = 0) -> np.ndarray:
    """Single-node aggregation on window t (convenience wrapper)."""
    if not 0 <= node < graph.window(t).num_nodes:
        raise ContractViolation(f"unknown node {node} in window {t}")
    return aggregate_batch(graph, t, np.array([node]), params, (seed, t)).data[0]


def maxpool_combine(z_i: Tensor, z_j: Tensor) -> Tensor:
    """Symmetric elementwise max of the two endpoint summaries."""
    return maximum(z_i, z_j)


def pair_update(h_prev: Tensor, z_i: Tensor, z_j: Tensor,
                params: ModelParams) -> Tensor:
    """One GRU step on the pair state, driven by the combined summaries."""
    x = maxpool_combine(z_i, z_j)
    update = (x @ params["gru.w_update"] + h_prev @ params["gru.u_update"]
              + params["gru.b_update"]).sigmoid()
    reset = (x @ params["gru.w_reset"] + h_prev @ params["gru.u_reset"]
             + params["gru.b_reset"]).sigmoid()
    cand = (x @ params["gru.w_cand"] + (reset * h_prev) @ params["gru.u_cand"]
            + params["gru.b_cand"]).tanh()
    return update * cand + (Tensor(1.0) - update) * h_prev


def classify(h: Tensor, params: ModelParams) -> Tensor:
    """Affine map from pair state to a raw score; larger means more likely
    to connect, decision threshold 0."""
    return h @ params["clf.w"] + params["clf.b"]


def score_pairs(graph: TemporalGraph, pairs, params: ModelParams, t: int,
                seed: int, mask_final_edges: set | None = None) -> Tensor:
    """Batched future-connection scores for node pairs at time t.

    Walks windows 1..t from a zero pair state. `mask_final_edges`, when
    given, replaces window t's adjacency with the supplied edge set for
    sampling (evaluation masks the test window's new links).
    """
    if t > graph.num_windows:
        raise ContractViolation(f"t={t} exceeds {graph.num_windows} windows")
    pairs = np.asarray([(p.i, p.j) if hasattr(p, "i") else p for p in pairs],
                       dtype=np.intp)
    n = pairs.shape[0]
    d = params.config.dim
    h = Tensor(np.zeros((n, d)))
    for tau in range(1, t + 1):
        g = graph.window(tau)
        win_graph = graph
        if tau == t and mask_final_edges is not None:
            win_graph = _masked_view(graph, t, mask_final_edges)
        # Nodes past this window's frontier are cold: zero features and an
        # empty neighborhood, marked -1 so the feature gather zeroes them.
        nodes = np.concatenate([pairs[:, 0], pairs[:, 1]])
        nodes = np.where(nodes < g.num_nodes, nodes, -1)
        z_t = aggregate_batch(win_graph, tau, nodes, params, (seed, tau))
        h = pair_update(h, z_t.take_rows(np.arange(n)),
                        z_t.take_rows(np.arange(n, 2 * n)), params)
    return classify(h, params)


def _masked_view(graph: TemporalGraph, t: int, edges: set) -> TemporalGraph:
    """A shallow graph view whose window t uses the given edge set for
    adjacency while keeping window t's node set and features."""
    from .graph import Graphlet

    g = graph.window(t)
    n = g.num_nodes
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    masked = Graphlet(n, [np.array(sorted(x), dtype=np.intp) for x in adj],
                      set(edges), g.features)
    view = TemporalGraph(graph.feature_dim)
    view.node_ids = graph.node_ids
    view.node_index = graph.node_index
    view.categories = graph.categories
    view.windows = graph.windows[:t - 1] + [masked]
    return view


def pair_score_sequence(graph: TemporalGraph, pair, params: ModelParams,
                        t: int, seed: int = 0) -> float:
    """Single-pair convenience wrapper around `score_pairs`."""
    return float(score_pairs(graph, [tuple(pair)], params, t, seed).data[0])
