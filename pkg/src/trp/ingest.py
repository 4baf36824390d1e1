"""Corpus ingestion: co-occurrence extraction, window splits, LSI features.

Documents arrive pre-annotated with term mentions (JSON lines); the
lexicon is a TSV of term_id / surface / category / description.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class TermLexicon:
    ids: list[str]
    surface: dict[str, str]
    category: dict[str, str]
    description: dict[str, str]

    @classmethod
    def load_tsv(cls, path) -> "TermLexicon":
        ids, surface, category, description = [], {}, {}, {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) < 3:
                    raise ValueError(f"{path}:{lineno}: expected >= 3 columns")
                term_id, surf, cat = parts[0], parts[1], parts[2]
                if term_id in surface:
                    raise ValueError(f"{path}:{lineno}: duplicate term id {term_id!r}")
                ids.append(term_id)
                surface[term_id] = surf
                category[term_id] = cat
                description[term_id] = parts[3] if len(parts) > 3 else ""
        return cls(ids, surface, category, description)

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.surface


@dataclass
class DocumentRecord:
    doc_id: str
    year: int
    title_terms: list[str] = field(default_factory=list)
    abstract_terms: list[str] = field(default_factory=list)
    paragraph_terms: list[list[str]] = field(default_factory=list)
    title_text: str = ""
    abstract_text: str = ""

    @classmethod
    def from_json(cls, obj: dict) -> "DocumentRecord":
        return cls(
            doc_id=str(obj["id"]),
            year=int(obj["year"]),
            title_terms=list(obj.get("title_terms", [])),
            abstract_terms=list(obj.get("abstract_terms", [])),
            paragraph_terms=[list(p) for p in obj.get("paragraph_terms", [])],
            title_text=obj.get("title_text", "") or "",
            abstract_text=obj.get("abstract_text", "") or "",
        )


def load_corpus_jsonl(path) -> list[DocumentRecord]:
    docs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(DocumentRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad document record: {exc}") from exc
    return docs


@dataclass(frozen=True)
class WindowSpec:
    """Contiguous year intervals; the first window absorbs earlier years."""
    start_year: int
    interval: int
    count: int

    def window_of(self, year: int) -> int | None:
        """1-based window index, or None when the year falls past the end."""
        if year <= self.start_year:
            return 1
        idx = (year - self.start_year - 1) // self.interval + 1
        return idx if idx <= self.count else None


@dataclass
class IngestionReport:
    documents: int = 0
    skipped_mentions: int = 0
    skipped_documents: int = 0
    edges_per_window: dict = field(default_factory=dict)
    beyond_last_window: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=1)


def extract_cooccurrence(documents, lexicon: TermLexicon,
                         report: IngestionReport | None = None
                         ) -> list[tuple[str, str, int]]:
    """Unordered co-mention pairs per field, deduplicated per document."""
    report = report if report is not None else IngestionReport()
    edges = []
    for doc in documents:
        unknown = [t for field_terms in
                   [doc.title_terms, doc.abstract_terms, *doc.paragraph_terms]
                   for t in field_terms if t not in lexicon]
        if unknown:
            report.skipped_mentions += len(unknown)
            report.skipped_documents += 1
            continue
        report.documents += 1
        doc_pairs = set()
        for field_terms in [doc.title_terms, doc.abstract_terms, *doc.paragraph_terms]:
            uniq = sorted(set(field_terms))
            for i in range(len(uniq)):
                for j in range(i + 1, len(uniq)):
                    doc_pairs.add((uniq[i], uniq[j]))
        edges.extend((a, b, doc.year) for a, b in sorted(doc_pairs))
    return edges


def split_by_windows(edges, spec: WindowSpec):
    """Assign years to windows, cumulative within the monotone sequence.

    Returns (per_window_new_edges, held_out) where per_window_new_edges[t]
    holds the edges first observed in window t+1 (0-based list), and
    held_out collects edges beyond the last window.
    """
    first_seen: dict[tuple[str, str], int] = {}
    held_out = []
    for a, b, year in edges:
        key = (min(a, b), max(a, b))
        t = spec.window_of(year)
        if t is None:
            held_out.append((a, b, year))
            continue
        if key not in first_seen or t < first_seen[key]:
            first_seen[key] = t
    per_window = [[] for _ in range(spec.count)]
    for key in sorted(first_seen):
        per_window[first_seen[key] - 1].append(key)
    return per_window, held_out


# -- LSI ---------------------------------------------------------------------


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tfidf(matrix: np.ndarray) -> np.ndarray:
    """Standard tf-idf with smooth idf over a docs x terms count matrix."""
    counts = np.asarray(matrix, dtype=np.float64)
    df = (counts > 0).sum(axis=0)
    n_docs = counts.shape[0]
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    return counts * idf


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per component, make the largest-magnitude right-vector coordinate positive."""
    for k in range(vt.shape[0]):
        pivot = np.argmax(np.abs(vt[k]))
        if vt[k, pivot] < 0:
            vt[k] = -vt[k]
            u[:, k] = -u[:, k]
    return u, vt


def _randomized_svd(matrix: np.ndarray, rank: int, seed: int = 0,
                    oversample: int = 8, power_iters: int = 2):
    rng = np.random.default_rng(seed)
    k = min(rank + oversample, min(matrix.shape))
    probe = rng.standard_normal((matrix.shape[1], k))
    y = matrix @ probe
    for _ in range(power_iters):
        y = matrix @ (matrix.T @ y)
    q, _ = np.linalg.qr(y)
    u_small, s, vt = np.linalg.svd(q.T @ matrix, full_matrices=False)
    return (q @ u_small)[:, :rank], s[:rank], vt[:rank]


def compute_lsi_features(doc_term_matrix: np.ndarray, rank: int,
                         seed: int = 0) -> np.ndarray:
    """Rank-truncated SVD term features: V_k scaled by singular values.

    Input is a docs x terms weight matrix; output is terms x rank. When
    rank exceeds the matrix rank the trailing columns are zero.
    """
    matrix = np.asarray(doc_term_matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("doc_term_matrix must be 2-D")
    if rank > min(matrix.shape):
        raise ValueError(f"rank {rank} exceeds matrix dimensions {matrix.shape}")
    if matrix.shape[0] * matrix.shape[1] == 0:
        return np.zeros((matrix.shape[1], rank))
    if min(matrix.shape) < 500:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
        u, s, vt = u[:, :rank], s[:rank], vt[:rank]
    else:
        u, s, vt = _randomized_svd(matrix, rank, seed=seed)
    u, vt = _fix_signs(u, vt)
    # Numerically-zero components carry no information; zero them out.
    tol = max(matrix.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    s = np.where(s > tol, s, 0.0)
    return vt.T * s


def _doc_rows(documents, term_to_col: dict[str, int], vocab_size: int,
              use_text: bool, text_vocab: dict[str, int] | None = None):
    """Count matrix rows: docs x terms (mentions) or docs x words (text)."""
    rows = np.zeros((len(documents), vocab_size))
    for r, doc in enumerate(documents):
        if use_text:
            for tok in tokenize(doc.title_text) + tokenize(doc.abstract_text):
                c = text_vocab.get(tok)
                if c is not None:
                    rows[r, c] += 1
        else:
            for field_terms in [doc.title_terms, doc.abstract_terms,
                                *doc.paragraph_terms]:
                for term in field_terms:
                    c = term_to_col.get(term)
                    if c is not None:
                        rows[r, c] += 1
    return rows


def description_features(lexicon: TermLexicon, term_order: list[str],
                         rank: int, seed: int = 0) -> np.ndarray:
    """LSI over the term-description bag of words; one row per term.

    Terms without a description get zero vectors.
    """
    vocab: dict[str, int] = {}
    docs_tokens = []
    for term in term_order:
        toks = tokenize(lexicon.description.get(term, ""))
        docs_tokens.append(toks)
        for tok in toks:
            vocab.setdefault(tok, len(vocab))
    if not vocab:
        return np.zeros((len(term_order), rank))
    counts = np.zeros((len(term_order), len(vocab)))
    for r, toks in enumerate(docs_tokens):
        for tok in toks:
            counts[r, vocab[tok]] += 1
    weighted = tfidf(counts)
    eff_rank = min(rank, *weighted.shape)
    # Descriptions are the documents here, so term features live in U*s.
    u, s, vt = np.linalg.svd(weighted, full_matrices=False)
    u, vt = _fix_signs(u, vt)
    feats = u[:, :eff_rank] * s[:eff_rank]
    if eff_rank < rank:
        feats = np.pad(feats, ((0, 0), (0, rank - eff_rank)))
    empty = np.array([len(t) == 0 for t in docs_tokens])
    feats[empty] = 0.0
    return feats


def context_features(documents, term_order: list[str], rank: int,
                     seed: int = 0) -> np.ndarray:
    """LSI context features from the document-term mention matrix."""
    term_to_col = {t: c for c, t in enumerate(term_order)}
    counts = _doc_rows(documents, term_to_col, len(term_order), use_text=False)
    if counts.shape[0] == 0:
        return np.zeros((len(term_order), rank))
    weighted = tfidf(counts)
    eff_rank = min(rank, *weighted.shape)
    feats = compute_lsi_features(weighted, eff_rank, seed=seed)
    if eff_rank < rank:
        feats = np.pad(feats, ((0, 0), (0, rank - eff_rank)))
    unseen = counts.sum(axis=0) == 0
    feats[unseen] = 0.0
    return feats


def update_context_features(documents, term_order: list[str], spec: WindowSpec,
                            t: int, rank: int, seed: int = 0) -> np.ndarray:
    """Context features recomputed from documents visible by window t."""
    visible = [d for d in documents
               if spec.window_of(d.year) is not None and spec.window_of(d.year) <= t]
    return context_features(visible, term_order, rank, seed=seed)


def build_graph_from_corpus(documents, lexicon: TermLexicon, spec: WindowSpec,
                            rank: int = 300, seed: int = 0):
    """Full ingestion: co-occurrence graph plus per-window LSI node features.

    Node features are the concatenation of a static description block and a
    per-window context block, each of dimension `rank`.
    """
    from .graph import TemporalGraph

    report = IngestionReport()
    edges = extract_cooccurrence(documents, lexicon, report)
    per_window, held_out = split_by_windows(edges, spec)
    report.beyond_last_window = len(held_out)

    # Node appearance order: first window in which a term occurs in an edge.
    term_order: list[str] = []
    first_window: dict[str, int] = {}
    for t, window_edges in enumerate(per_window, start=1):
        for a, b in window_edges:
            for term in (a, b):
                if term not in first_window:
                    first_window[term] = t
                    term_order.append(term)

    graph = TemporalGraph(feature_dim=2 * rank)
    desc = description_features(lexicon, term_order, rank, seed=seed)
    n_seen = 0
    kept = [d for d in documents if all(
        term in lexicon for field_terms in
        [d.title_terms, d.abstract_terms, *d.paragraph_terms] for term in field_terms)]
    for t in range(1, spec.count + 1):
        new_terms = [term for term in term_order if first_window[term] == t]
        n_seen += len(new_terms)
        ctx = update_context_features(kept, term_order[:n_seen], spec, t, rank,
                                      seed=seed)
        features = np.concatenate([desc[:n_seen], ctx], axis=1)
        new_nodes = [(term, lexicon.category[term]) for term in new_terms]
        graph.add_snapshot(new_nodes, per_window[t - 1], features)
        report.edges_per_window[str(t)] = len(graph.window(t).edges)
    return graph, report
