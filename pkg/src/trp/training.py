"""Joint training, learning-rate grid search, and the per-window
evaluation protocol.

Training walks epochs over label steps t = 1..T_train-1 (labels from the
next window) plus a final consistency step at t = T_train that reuses the
previous step's labels, so the held-out final window of the supplied
graph is never consulted. The classification risk is minimized with Adam;
the class prior for the PU estimators is re-estimated from a reservoir of
pair embeddings at a configured epoch cadence.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, ContractViolation, Tensor, grad
from .graph import PairSample, TemporalGraph
from .metrics import f1_pu, f1_scores, lrap
from .model import ModelConfig, ModelParams, classify, score_pairs
from .prior import estimate_prior, fit_mixture
from .risk import nnpu_risk, pn_risk, upu_risk

PAPER_LR_GRID = (1e-2, 5e-3, 1e-3, 5e-2)

EVAL_CHUNK = 512


@dataclass
class TrainConfig:
    estimator: str = "upu"  # pn | upu | nnpu
    lr: float = 1e-3
    epochs: int = 10
    dim: int = 128
    sample_sizes: tuple[int, ...] = (20, 10)
    aggregator: str = "mean"
    unlabeled_ratio: float = 2.0
    prior_cadence: int = 1  # epochs between prior re-estimations
    prior_init: float = 0.5
    prior_steps: int = 200
    prior_mc: int = 2
    reservoir: int = 4096
    hide_positive_fraction: float = 0.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.estimator not in ("pn", "upu", "nnpu"):
            raise ContractViolation(f"unknown estimator {self.estimator!r}")
        if self.lr <= 0:
            raise ContractViolation("learning rate must be positive")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["sample_sizes"] = list(self.sample_sizes)
        return d


@dataclass
class TrainHistory:
    risk: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    pi_hat: list = field(default_factory=list)
    diverged: bool = False


@dataclass
class MetricsReport:
    window: int
    estimator: str
    f1_s: float
    f1_m: float
    f1_p: float
    lrap: float
    counts: dict
    pi_hat: list = field(default_factory=list)
    loss: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"window": self.window, "estimator": self.estimator.upper(),
                "f1_s": self.f1_s, "f1_m": self.f1_m, "f1_p": self.f1_p,
                "lrap": self.lrap, "counts": self.counts,
                "pi_hat": self.pi_hat, "loss": self.loss}


def _hide_positives(pairs: list[PairSample], fraction: float, rng) -> list[PairSample]:
    """Demote a random fraction of positives to unlabeled (stress setting)."""
    if fraction <= 0:
        return pairs
    out = []
    for p in pairs:
        if p.observed and rng.random() < fraction:
            out.append(PairSample(p.i, p.j, p.t, False))
        else:
            out.append(p)
    return out


def _risk(estimator: str, pos: Tensor, unl: Tensor, prior: float) -> Tensor:
    if estimator == "pn":
        # PN treats all unlabeled as negatives; the prior is the
        # empirical positive fraction of the batch.
        n_pos, n_unl = pos.data.size, unl.data.size
        return pn_risk(pos, unl, n_pos / (n_pos + n_unl))
    if estimator == "upu":
        return upu_risk(pos, unl, prior)
    return nnpu_risk(pos, unl, prior)


def _score_with_state(graph, pairs, params, t, seed):
    """Scores plus the final pair states (for the prior reservoir)."""
    from .model import aggregate_batch, pair_update

    pairs_arr = np.asarray([(p.i, p.j) for p in pairs], dtype=np.intp)
    n = pairs_arr.shape[0]
    h = Tensor(np.zeros((n, params.config.dim)))
    for tau in range(1, t + 1):
        g = graph.window(tau)
        nodes = np.concatenate([pairs_arr[:, 0], pairs_arr[:, 1]])
        nodes = np.where(nodes < g.num_nodes, nodes, -1)
        z = aggregate_batch(graph, tau, nodes, params, (seed, tau))
        h = pair_update(h, z.take_rows(np.arange(n)),
                        z.take_rows(np.arange(n, 2 * n)), params)
    return classify(h, params), h


def train(graph: TemporalGraph, config: TrainConfig
          ) -> tuple[ModelParams, TrainHistory]:
    """Train the scoring networks on windows 1..T-1 of the given graph.

    The final window is reserved for evaluation and never consulted:
    label steps run t = 1..T-2 from next-window edges, and the t = T-1
    consistency step duplicates the step T-2 labels.
    """
    T = graph.num_windows
    if T < 2:
        raise ContractViolation("training requires at least 2 windows")
    model_config = ModelConfig(feature_dim=graph.feature_dim, dim=config.dim,
                               sample_sizes=tuple(config.sample_sizes),
                               aggregator=config.aggregator)
    params = ModelParams(model_config, seed=config.seed)
    opt = Adam(params.tensors, lr=config.lr)
    history = TrainHistory()
    t_train = T - 1
    pi = config.prior_init
    checkpoint = params.state_dict()
    lr_halved = False

    for epoch in range(config.epochs):
        epoch_risk = []
        pos_states: list[np.ndarray] = []
        all_states: list[np.ndarray] = []
        for t in range(1, t_train + 1):
            # Consistency duplication: the final training step reuses the
            # previous step's label window.
            label_step = t if t < t_train else max(t_train - 1, 1)
            rng = np.random.default_rng((config.seed, epoch, t, 7))
            pairs, _ = graph.build_training_pairs(
                label_step, _unlabeled_count(graph, label_step, config),
                seed=(config.seed, epoch, t))
            if config.hide_positive_fraction > 0:
                pairs = _hide_positives(pairs, config.hide_positive_fraction, rng)
            pos_idx = np.array([k for k, p in enumerate(pairs) if p.observed])
            unl_idx = np.array([k for k, p in enumerate(pairs) if not p.observed])
            if pos_idx.size == 0 or unl_idx.size == 0:
                continue
            scores, state = _score_with_state(
                graph, pairs, params, t, seed=_step_seed(config.seed, epoch, t))
            loss = _risk(config.estimator, scores.take_rows(pos_idx),
                         scores.take_rows(unl_idx), pi)
            if not np.isfinite(loss.data):
                params.load_state_dict(checkpoint)
                if lr_halved:
                    history.diverged = True
                    return params, history
                lr_halved = True
                opt = Adam(params.tensors, lr=config.lr / 2)
                continue
            grads = grad(loss, params.tensors.values())
            opt.step({k: grads[id(v)] for k, v in params.tensors.items()})
            checkpoint = params.state_dict()
            epoch_risk.append(float(loss.data))
            pos_states.append(state.data[pos_idx])
            all_states.append(state.data)
        history.risk.append(float(np.mean(epoch_risk)) if epoch_risk else float("nan"))
        if config.estimator in ("upu", "nnpu") and all_states \
                and (epoch + 1) % config.prior_cadence == 0:
            pi, elbo_val = _reestimate_prior(pos_states, all_states, config, epoch)
            history.elbo.append(elbo_val)
        history.pi_hat.append(pi)
    return params, history


def _unlabeled_count(graph: TemporalGraph, label_step: int,
                     config: TrainConfig) -> int:
    n_pos = len(graph.window(label_step + 1).edges)
    return max(1, int(round(config.unlabeled_ratio * n_pos)))


def _step_seed(seed: int, epoch: int, t: int) -> tuple:
    return (seed, epoch, t)


def _reestimate_prior(pos_states, all_states, config: TrainConfig,
                      epoch: int) -> tuple[float, float]:
    rng = np.random.default_rng((config.seed, epoch, 13))
    pool = np.concatenate(all_states, axis=0)
    if pool.shape[0] > config.reservoir:
        pool = pool[rng.choice(pool.shape[0], size=config.reservoir, replace=False)]
    fit = fit_mixture(pool, steps=config.prior_steps, lr=0.05,
                      mc_samples=config.prior_mc,
                      seed=int(rng.integers(2 ** 62)))
    positives = np.concatenate(pos_states, axis=0)
    estimate = estimate_prior(fit.theta, positives)
    elbo_val = fit.trajectory[-1] if fit.trajectory else float("nan")
    return estimate.prior, elbo_val


# -- evaluation ---------------------------------------------------------------


def _score_chunked(graph, pairs, params, t, seed, threads=1, mask_final_edges=None):
    """Deterministic chunked scoring; chunk layout is independent of the
    thread count, so parallel runs reproduce serial ones."""
    chunks = [pairs[k:k + EVAL_CHUNK] for k in range(0, len(pairs), EVAL_CHUNK)]

    def run(chunk):
        return score_pairs(graph, chunk, params, t, seed,
                           mask_final_edges=mask_final_edges).data

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts) if parts else np.empty(0)


def build_eval_pairs(graph: TemporalGraph, unlabeled_ratio: float = 1.5,
                     seed: int = 0) -> tuple[list, np.ndarray]:
    """Test positives (new links of the final window) plus sampled
    unlinked pairs of the final window; returns (pairs, labels in ±1)."""
    T = graph.num_windows
    if T < 2:
        raise ContractViolation("evaluation requires at least 2 windows")
    last, prev = graph.window(T), graph.window(T - 1)
    positives = sorted(last.edges - prev.edges)
    if not positives:
        raise ContractViolation("no new links in the final window")
    n = last.num_nodes
    rng = np.random.default_rng((seed, T, 99))
    want = int(round(unlabeled_ratio * len(positives)))
    non_edges: set = set()
    total_non = n * (n - 1) // 2 - len(last.edges)
    want = min(want, total_non)
    if total_non and want:
        if total_non <= 4 * want:
            every = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if (i, j) not in last.edges]
            idx = rng.choice(len(every), size=want, replace=False)
            non_edges = {every[k] for k in idx}
        else:
            while len(non_edges) < want:
                a, b = rng.integers(0, n), rng.integers(0, n)
                if a == b:
                    continue
                p = (int(min(a, b)), int(max(a, b)))
                if p not in last.edges:
                    non_edges.add(p)
    pairs = positives + sorted(non_edges)
    labels = np.array([1] * len(positives) + [-1] * len(non_edges))
    return pairs, labels


def evaluate(params: ModelParams, graph: TemporalGraph, estimator: str = "upu",
             unlabeled_ratio: float = 1.5, seed: int = 0, threads: int = 1,
             history: TrainHistory | None = None) -> MetricsReport:
    """Score the final window's new links against sampled unlinked pairs.

    Scoring runs Algorithm-style sequences to t = T with the final
    window's adjacency masked back to the previous window's edges, so the
    test links themselves never inform the score.
    """
    T = graph.num_windows
    pairs, labels = build_eval_pairs(graph, unlabeled_ratio, seed)
    scores = _score_chunked(graph, pairs, params, T, seed, threads=threads,
                            mask_final_edges=graph.window(T - 1).edges)
    predictions = np.where(scores > 0, 1, -1)
    f1_s, f1_m = f1_scores(predictions, labels)
    f1_p = f1_pu(predictions, labels == 1)
    lrap_val = lrap(scores, labels)
    from .metrics import confusion
    tp, fp, fn, tn = confusion(predictions, labels)
    return MetricsReport(
        window=T, estimator=estimator, f1_s=f1_s, f1_m=f1_m, f1_p=f1_p,
        lrap=lrap_val, counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        pi_hat=list(history.pi_hat) if history else [],
        loss=list(history.risk) if history else [])


def incremental_eval(graph: TemporalGraph, config: TrainConfig,
                     start: int = 3, unlabeled_ratio: float = 1.5
                     ) -> tuple[list[MetricsReport], list[int]]:
    """Per-window learning curve: for each t, train on windows < t and
    evaluate on window t's new links. Windows with no new links are
    skipped; their indices are returned as diagnostics."""
    T = graph.num_windows
    if T < 3:
        raise ContractViolation("incremental evaluation requires >= 3 windows")
    reports, skipped = [], []
    for t in range(max(start, 2), T + 1):
        sub = graph.truncated(t)
        new_links = sub.window(t).edges - sub.window(t - 1).edges
        if not new_links:
            skipped.append(t)
            continue
        params, history = train(sub, config)
        report = evaluate(params, sub, estimator=config.estimator,
                          unlabeled_ratio=unlabeled_ratio, seed=config.seed,
                          threads=config.threads, history=history)
        report.window = t
        reports.append(report)
    return reports, skipped


@dataclass
class GridSearchResult:
    best: TrainConfig | None
    scores: dict  # lr -> F1-S or None for diverged runs


def grid_search(graph: TemporalGraph, config: TrainConfig,
                lr_grid=PAPER_LR_GRID) -> GridSearchResult:
    """Train once per learning rate on the tuning split (all but the last
    window) and select by F1-S on the held-out final tuning window; ties
    break toward the lower rate."""
    if not lr_grid:
        raise ContractViolation("lr_grid must be non-empty")
    tuning = graph.truncated(graph.num_windows - 1)
    scores: dict[float, float | None] = {}
    for lr in lr_grid:
        candidate = TrainConfig(**{**config.to_dict(), "lr": lr})
        candidate.sample_sizes = tuple(candidate.sample_sizes)
        try:
            params, history = train(tuning, candidate)
            if history.diverged or any(not np.isfinite(x) for x in history.risk):
                scores[lr] = None
                continue
            report = evaluate(params, tuning, estimator=config.estimator,
                              seed=config.seed, threads=config.threads,
                              history=history)
            scores[lr] = report.f1_s
        except FloatingPointError:
            scores[lr] = None
    valid = {lr: s for lr, s in scores.items() if s is not None}
    if not valid:
        return GridSearchResult(None, scores)
    best_lr = min(valid, key=lambda lr: (-valid[lr], lr))
    best = TrainConfig(**{**config.to_dict(), "lr": best_lr})
    best.sample_sizes = tuple(best.sample_sizes)
    return GridSearchResult(best, scores)


def predict_partners(params: ModelParams, graph: TemporalGraph, node: int,
                     k: int, seed: int = 0, threads: int = 1) -> list[tuple[int, float]]:
    """Top-k unlinked partner nodes for `node` by score on the final window."""
    T = graph.num_windows
    g = graph.window(T)
    linked = {b if a == node else a for a, b in g.edges if node in (a, b)}
    candidates = [other for other in range(g.num_nodes)
                  if other != node and other not in linked]
    if k <= 0 or not candidates:
        return []
    pairs = [(min(node, c), max(node, c)) for c in candidates]
    scores = _score_chunked(graph, pairs, params, T, seed, threads=threads)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(candidates[i], float(scores[i])) for i in order]
