"""Sigmoid-loss risk estimators: PN, unbiased PU, and non-negative PU.

Scores are raw (pre-logistic) reals; the sigmoid loss does the squashing:
l(p, +1) = 1 / (1 + exp(p)) and l(p, -1) = 1 / (1 + exp(-p)), so the two
sides are complementary and each lies in (0, 1).
"""

from __future__ import annotations

import numpy as np

from .autodiff import ContractViolation, Tensor


def sigmoid_loss(score, target: int):
    """Loss of predicting raw `score` when the truth is target (+1/-1).

    Accepts floats, arrays, or Tensors (differentiable path).
    """
    if target not in (+1, -1):
        raise ContractViolation("target must be +1 or -1")
    if isinstance(score, Tensor):
        return (-score).sigmoid() if target == +1 else score.sigmoid()
    x = np.asarray(score, dtype=np.float64)
    # Overflow-safe logistic; asymptotic past |x| = 36.
    z = -x if target == +1 else x
    out = np.empty_like(z)
    small = z < -36
    big = z > 36
    mid = ~(small | big)
    out[small] = 0.0
    out[big] = 1.0
    out[mid] = np.where(z[mid] >= 0,
                        1.0 / (1.0 + np.exp(-z[mid])),
                        np.exp(z[mid]) / (1.0 + np.exp(z[mid])))
    return out if out.ndim else float(out)


def _mean_loss(scores: Tensor, target: int) -> Tensor:
    return sigmoid_loss(scores, target).mean()


def pn_risk(positive_scores: Tensor, negative_scores: Tensor, prior: float) -> Tensor:
    """Positive-negative risk with class prior weighting."""
    _check_prior(prior)
    if negative_scores.data.size == 0:
        raise ContractViolation("PN risk requires negative samples")
    if positive_scores.data.size == 0 and prior > 0:
        raise ContractViolation("PN risk with prior > 0 requires positive samples")
    neg_term = (1.0 - prior) * _mean_loss(negative_scores, -1)
    if prior == 0:
        return neg_term
    return prior * _mean_loss(positive_scores, +1) + neg_term


def upu_risk(positive_scores: Tensor, unlabeled_scores: Tensor, prior: float) -> Tensor:
    """Unbiased PU risk; may legitimately go negative."""
    _check_prior(prior)
    if unlabeled_scores.data.size == 0:
        raise ContractViolation("PU risk requires unlabeled samples")
    unl_term = _mean_loss(unlabeled_scores, -1)
    if prior == 0:
        return unl_term
    if positive_scores.data.size == 0:
        raise ContractViolation("PU risk with prior > 0 requires positive samples")
    return (prior * _mean_loss(positive_scores, +1) + unl_term
            - prior * _mean_loss(positive_scores, -1))


def nnpu_risk(positive_scores: Tensor, unlabeled_scores: Tensor, prior: float) -> Tensor:
    """Non-negative PU risk: the surrogate-negative term is clamped at zero
    (zero gradient while the clamp is active)."""
    _check_prior(prior)
    if unlabeled_scores.data.size == 0:
        raise ContractViolation("PU risk requires unlabeled samples")
    unl_term = _mean_loss(unlabeled_scores, -1)
    if prior == 0:
        return unl_term.relu()
    if positive_scores.data.size == 0:
        raise ContractViolation("PU risk with prior > 0 requires positive samples")
    return (prior * _mean_loss(positive_scores, +1)
            + (unl_term - prior * _mean_loss(positive_scores, -1)).relu())


def _check_prior(prior: float) -> None:
    if not 0.0 <= prior <= 1.0:
        raise ContractViolation(f"class prior must be in [0, 1], got {prior}")


def as_tensor(scores) -> Tensor:
    return scores if isinstance(scores, Tensor) else Tensor(np.asarray(scores, dtype=np.float64))
