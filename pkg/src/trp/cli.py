"""Command-line driver: graph construction, training, evaluation,
prediction, and manifest replay.

Every command materializes its resolved configuration into a run
manifest before heavy work starts; `trp replay` re-runs a manifest and
must reproduce the primary outputs byte for byte. Exit codes: 0 success,
2 usage/input error, 3 numerical failure. `TRP_LOG` selects verbosity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .autodiff import CheckpointError, load_checkpoint, save_checkpoint
from .graph import TemporalGraph, from_edge_list, load_edge_tsv, load_feature_matrix
from .ingest import TermLexicon, WindowSpec, build_graph_from_corpus, load_corpus_jsonl
from .model import ModelParams
from .reporting import (render_curves_figure, render_history_figure,
                        render_metrics_figure, write_curves_csv, write_metrics_json)
from .training import (PAPER_LR_GRID, TrainConfig, evaluate, grid_search,
                       incremental_eval, predict_partners, train)

log = logging.getLogger("trp")


def _setup_logging() -> None:
    level = os.environ.get("TRP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _hash_inputs(paths: dict) -> dict:
    hashes = {}
    for name, path in paths.items():
        p = Path(path)
        if p.is_dir():
            hashes[name] = {f.name: _sha256(f) for f in sorted(p.iterdir())
                            if f.is_file()}
        else:
            hashes[name] = _sha256(p)
    return hashes


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: dict, seed: int) -> None:
    manifest = {
        "tool": "trp",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "input_hashes": _hash_inputs(inputs),
        "out": str(out_dir),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def _input_error(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


@click.group()
def main() -> None:
    """Temporal relationship prediction with positive-unlabeled learning."""
    _setup_logging()


@main.command("build-graph")
@click.option("--corpus", type=click.Path(), help="JSON-lines document corpus.")
@click.option("--lexicon", type=click.Path(), help="TSV term lexicon.")
@click.option("--edges", type=click.Path(), help="Edge-list TSV (term_a term_b window).")
@click.option("--features-dir", type=click.Path(),
              help="Directory of per-window feature files (features_001.txt, ...).")
@click.option("--start-year", type=int, default=1949, show_default=True)
@click.option("--interval", type=int, default=10, show_default=True)
@click.option("--windows", type=int, default=7, show_default=True)
@click.option("--rank", type=int, default=300, show_default=True,
              help="LSI rank per feature block.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_build_graph(corpus, lexicon, edges, features_dir, start_year, interval,
                    windows, rank, seed, out):
    """Build a temporal co-occurrence graph snapshot."""
    out_dir = Path(out)
    if edges:
        if not features_dir:
            _input_error("--edges requires --features-dir")
        for p in (edges, features_dir):
            if not Path(p).exists():
                _input_error(f"input not found: {p}")
        inputs = {"edges": edges, "features_dir": features_dir}
        config = {"mode": "edge-list"}
        _write_manifest(out_dir, "build-graph", config, inputs, seed)
        try:
            rows = load_edge_tsv(edges)
            feature_files = sorted(Path(features_dir).glob("features_*.txt"))
            features = [load_feature_matrix(f) for f in feature_files]
            graph = from_edge_list(rows, features)
        except ValueError as exc:
            _input_error(str(exc))
        graph.save(out_dir / "graph")
        report_obj = {"documents": None, "edges_per_window": {
            str(t): len(graph.window(t).edges) for t in range(1, graph.num_windows + 1)}}
        (out_dir / "ingest_report.json").write_text(
            json.dumps(report_obj, sort_keys=True, indent=1))
    else:
        if not (corpus and lexicon):
            _input_error("provide --corpus and --lexicon, or --edges and --features-dir")
        for p in (corpus, lexicon):
            if not Path(p).exists():
                _input_error(f"input not found: {p}")
        spec = WindowSpec(start_year, interval, windows)
        config = {"mode": "corpus", "start_year": start_year, "interval": interval,
                  "windows": windows, "rank": rank}
        _write_manifest(out_dir, "build-graph", config,
                        {"corpus": corpus, "lexicon": lexicon}, seed)
        try:
            documents = load_corpus_jsonl(corpus)
            lex = TermLexicon.load_tsv(lexicon)
        except ValueError as exc:
            _input_error(str(exc))
        graph, report = build_graph_from_corpus(documents, lex, spec,
                                                rank=rank, seed=seed)
        graph.save(out_dir / "graph")
        (out_dir / "ingest_report.json").write_text(report.to_json())
    counts = {t: len(graph.window(t).edges) for t in range(1, graph.num_windows + 1)}
    click.echo(f"graph: {graph.num_windows} windows, "
               f"{len(graph.node_ids)} nodes, edges per window {counts}")


def _load_graph(path) -> TemporalGraph:
    p = Path(path)
    if not (p / "graph.json").exists():
        _input_error(f"graph snapshot not found at {path}")
    return TemporalGraph.load(p)


def _train_config(**kwargs) -> TrainConfig:
    try:
        return TrainConfig(**kwargs)
    except Exception as exc:
        _input_error(str(exc))


train_options = [
    click.option("--estimator", type=click.Choice(["pn", "upu", "nnpu"]),
                 default="upu", show_default=True),
    click.option("--lr", type=float, default=1e-3, show_default=True),
    click.option("--epochs", type=int, default=10, show_default=True),
    click.option("--dim", type=int, default=128, show_default=True),
    click.option("--samples", default="20,10", show_default=True,
                 help="Comma-separated neighborhood sample sizes S1,S2,..."),
    click.option("--aggregator", type=click.Choice(["mean", "maxpool"]),
                 default="mean", show_default=True),
    click.option("--unlabeled-ratio", type=float, default=2.0, show_default=True),
    click.option("--prior-cadence", type=int, default=1, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--threads", type=int, default=1, show_default=True),
]


def _with_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@main.command("train")
@click.option("--graph", "graph_path", required=True, type=click.Path())
@click.option("--grid-search", "do_grid", is_flag=True,
              help="Run the default learning-rate grid and train with the winner.")
@_with_options(train_options)
@click.option("--out", required=True, type=click.Path())
def cmd_train(graph_path, do_grid, estimator, lr, epochs, dim, samples,
              aggregator, unlabeled_ratio, prior_cadence, seed, threads, out):
    """Train the pair-scoring model and write a checkpoint."""
    sample_sizes = tuple(int(s) for s in samples.split(","))
    config = _train_config(estimator=estimator, lr=lr, epochs=epochs, dim=dim,
                           sample_sizes=sample_sizes, aggregator=aggregator,
                           unlabeled_ratio=unlabeled_ratio,
                           prior_cadence=prior_cadence, seed=seed, threads=threads)
    out_dir = Path(out)
    _write_manifest(out_dir, "train", {**config.to_dict(), "grid_search": do_grid},
                    {"graph": graph_path}, seed)
    graph = _load_graph(graph_path)
    if do_grid:
        result = grid_search(graph, config, PAPER_LR_GRID)
        if result.best is None:
            click.echo("error: every grid-search run diverged", err=True)
            sys.exit(3)
        config = result.best
        (out_dir / "grid_search.json").write_text(json.dumps(
            {str(lr): s for lr, s in result.scores.items()}, sort_keys=True, indent=1))
        log.info("grid search selected lr=%g", config.lr)
    params, history = train(graph, config)
    if history.diverged:
        click.echo("error: training diverged (non-finite loss persisted after "
                   "halving the learning rate)", err=True)
        sys.exit(3)
    save_checkpoint(out_dir / "checkpoint.bin", params.state_dict(),
                    meta={"model": params.manifest(), "train": config.to_dict()})
    (out_dir / "history.json").write_text(json.dumps(
        {"risk": history.risk, "elbo": history.elbo, "pi_hat": history.pi_hat},
        sort_keys=True, indent=1))
    render_history_figure(out_dir / "history.png", history)
    click.echo(f"trained {config.estimator} for {len(history.risk)} epochs; "
               f"final risk {history.risk[-1]:.6f}" if history.risk else "no epochs run")


def _load_params(checkpoint_path, graph: TemporalGraph) -> tuple[ModelParams, dict]:
    if not Path(checkpoint_path).exists():
        _input_error(f"checkpoint not found: {checkpoint_path}")
    try:
        tensors, meta = load_checkpoint(checkpoint_path)
    except CheckpointError as exc:
        _input_error(str(exc))
    model_meta = meta.get("model", {})
    if model_meta.get("feature_dim") != graph.feature_dim:
        _input_error(
            f"dimension mismatch: checkpoint feature_dim={model_meta.get('feature_dim')} "
            f"vs graph feature_dim={graph.feature_dim}")
    try:
        params = ModelParams.from_manifest(model_meta, tensors)
    except Exception as exc:
        _input_error(f"bad checkpoint: {exc}")
    return params, meta


@main.command("evaluate")
@click.option("--graph", "graph_path", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--incremental", is_flag=True,
              help="Also produce the per-window learning curve.")
@click.option("--incremental-start", type=int, default=3, show_default=True)
@click.option("--unlabeled-ratio", type=float, default=1.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_evaluate(graph_path, checkpoint, incremental, incremental_start,
                 unlabeled_ratio, seed, threads, out):
    """Evaluate a checkpoint on the final window's new links."""
    out_dir = Path(out)
    _write_manifest(out_dir, "evaluate",
                    {"incremental": incremental,
                     "incremental_start": incremental_start,
                     "unlabeled_ratio": unlabeled_ratio, "threads": threads},
                    {"graph": graph_path, "checkpoint": checkpoint}, seed)
    graph = _load_graph(graph_path)
    params, meta = _load_params(checkpoint, graph)
    train_meta = meta.get("train", {})
    estimator = train_meta.get("estimator", "upu")
    report = evaluate(params, graph, estimator=estimator,
                      unlabeled_ratio=unlabeled_ratio, seed=seed, threads=threads)
    write_metrics_json(out_dir / "metrics.json", report)
    render_metrics_figure(out_dir / "metrics.png", report)
    click.echo(f"F1-S {report.f1_s:.4f}  F1-M {report.f1_m:.4f}  "
               f"F1-P {report.f1_p:.4f}  LRAP {report.lrap:.4f}")
    if incremental:
        config = _train_config(**{**train_meta,
                                  "sample_sizes": tuple(train_meta.get(
                                      "sample_sizes", params.config.sample_sizes)),
                                  "seed": seed, "threads": threads})
        reports, skipped = incremental_eval(graph, config, start=incremental_start,
                                            unlabeled_ratio=unlabeled_ratio)
        write_curves_csv(out_dir / "curves.csv", reports)
        render_curves_figure(out_dir / "curves.png", reports)
        for t in skipped:
            log.warning("window %d skipped: no new links", t)
        click.echo(f"learning curve: {len(reports)} points "
                   f"({len(skipped)} windows skipped)")


@main.command("predict")
@click.option("--graph", "graph_path", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--term", required=True, help="Term id to rank partners for.")
@click.option("--top", "k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_predict(graph_path, checkpoint, term, k, seed, threads, out):
    """Rank the top-k unlinked partner terms for a given term."""
    out_dir = Path(out)
    _write_manifest(out_dir, "predict", {"term": term, "top": k, "threads": threads},
                    {"graph": graph_path, "checkpoint": checkpoint}, seed)
    graph = _load_graph(graph_path)
    params, _ = _load_params(checkpoint, graph)
    node = graph.node_index.get(term)
    if node is None:
        nearest = sorted(graph.node_ids, key=lambda t: (t != term, t))[:5]
        _input_error(f"unknown term {term!r}; nearest known ids: {nearest}")
    ranked = predict_partners(params, graph, node, k, seed=seed, threads=threads)
    rows = [{"term": graph.node_ids[other], "score": score}
            for other, score in ranked]
    (out_dir / "predictions.json").write_text(json.dumps(rows, indent=1))
    if not ranked and k > 0:
        click.echo(f"term {term!r} is already linked to every other node")
    for row in rows:
        click.echo(f"{row['term']}\t{row['score']:.6f}")


@main.command("replay")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def cmd_replay(manifest, out):
    """Re-run a recorded manifest into a fresh output directory."""
    if not Path(manifest).exists():
        _input_error(f"manifest not found: {manifest}")
    try:
        record = json.loads(Path(manifest).read_text())
    except json.JSONDecodeError as exc:
        _input_error(f"unreadable manifest: {exc}")
    recorded_hashes = record.get("input_hashes", {})
    current = _hash_inputs({k: v for k, v in record["inputs"].items()})
    if current != recorded_hashes:
        _input_error("input files changed since the recorded run")
    command = record["command"]
    config = record["config"]
    inputs = record["inputs"]
    args = ["--out", out]
    if command == "build-graph":
        if config.get("mode") == "edge-list":
            args += ["--edges", inputs["edges"], "--features-dir", inputs["features_dir"]]
        else:
            args += ["--corpus", inputs["corpus"], "--lexicon", inputs["lexicon"],
                     "--start-year", str(config["start_year"]),
                     "--interval", str(config["interval"]),
                     "--windows", str(config["windows"]),
                     "--rank", str(config["rank"])]
        args += ["--seed", str(record["seed"])]
    elif command == "train":
        args += ["--graph", inputs["graph"],
                 "--estimator", config["estimator"], "--lr", str(config["lr"]),
                 "--epochs", str(config["epochs"]), "--dim", str(config["dim"]),
                 "--samples", ",".join(str(s) for s in config["sample_sizes"]),
                 "--aggregator", config["aggregator"],
                 "--unlabeled-ratio", str(config["unlabeled_ratio"]),
                 "--prior-cadence", str(config["prior_cadence"]),
                 "--seed", str(config["seed"]), "--threads", str(config["threads"])]
        if config.get("grid_search"):
            args += ["--grid-search"]
    elif command == "evaluate":
        args += ["--graph", inputs["graph"], "--checkpoint", inputs["checkpoint"],
                 "--incremental-start", str(config["incremental_start"]),
                 "--unlabeled-ratio", str(config["unlabeled_ratio"]),
                 "--seed", str(record["seed"]), "--threads", str(config["threads"])]
        if config.get("incremental"):
            args += ["--incremental"]
    elif command == "predict":
        args += ["--graph", inputs["graph"], "--checkpoint", inputs["checkpoint"],
                 "--term", config["term"], "--top", str(config["top"]),
                 "--seed", str(record["seed"]), "--threads", str(config["threads"])]
    else:
        _input_error(f"unknown command in manifest: {command}")
    main.main(args=[command] + args, standalone_mode=False)


if __name__ == "__main__":
    main()
