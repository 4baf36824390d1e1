"""Evaluation metrics: F1 on the positive class, macro F1, the PU-adapted
F1 criterion (recall squared over predicted-positive rate), and label
ranking average precision with exact tie-permutation averaging."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractViolation


def confusion(predictions: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int]:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == -1)).sum())
    fn = int(((predictions == -1) & (labels == 1)).sum())
    tn = int(((predictions == -1) & (labels == -1)).sum())
    return tp, fp, fn, tn


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_scores(predictions, labels) -> tuple[float, float]:
    """(F1 of the positive class, unweighted macro F1 over both classes).

    A class absent from both predictions and labels contributes 0 to the
    macro average.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ContractViolation("predictions and labels must be non-empty and aligned")
    tp, fp, fn, tn = confusion(predictions, labels)
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    return f1_pos, (f1_pos + f1_neg) / 2.0


def f1_pu(predictions, observed_positive) -> float:
    """Recall on observed positives squared, over the predicted-positive
    rate across all evaluated pairs. May exceed 1."""
    predictions = np.asarray(predictions)
    observed = np.asarray(observed_positive, dtype=bool)
    if not observed.any():
        raise ContractViolation("at least one observed positive is required")
    n_predicted = int((predictions == 1).sum())
    if n_predicted == 0:
        return 0.0
    recall = ((predictions == 1) & observed).sum() / observed.sum()
    rate = n_predicted / predictions.size
    return float(recall ** 2 / rate)


def lrap(scores, labels) -> float:
    """Label ranking average precision.

    Mean over positives of (positives ranked at-or-above) / rank under a
    descending sort; tied scores are averaged exactly over all tie
    permutations (the conditional count of positives above a tied item is
    linear in its slot, so the expectation reduces to a slot average).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ContractViolation("scores must be non-empty")
    pos = labels == 1
    if not pos.any():
        raise ContractViolation("at least one positive label is required")
    terms = []
    for i in np.flatnonzero(pos):
        s = scores[i]
        above = scores > s
        tied_other = (scores == s)
        tied_other[i] = False
        base_rank = int(above.sum())
        base_pos = int((above & pos).sum())
        g = int(tied_other.sum())
        p = int((tied_other & pos).sum())
        vals = [(base_pos + 1 + (j * p / g if g else 0.0)) / (base_rank + j + 1)
                for j in range(g + 1)]
        terms.append(sum(vals) / (g + 1))
    return float(np.mean(terms))
