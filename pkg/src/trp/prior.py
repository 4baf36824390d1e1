"""Positive class prior estimation via stochastic variational inference
over a two-component diagonal Gaussian mixture of pair embeddings.

The mixture parameters (means, log-variances, mixing logits) get Gaussian
variational posteriors on their unconstrained forms: variances through an
exp transform, the mixing vector through a softmax. Standard-normal
priors on the unconstrained parameters give a closed-form KL term; the
likelihood expectation is a reparameterized Monte Carlo estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, ContractViolation, Tensor, grad, logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))
SCALE_FLOOR = 1e-6


class VariationalPosterior:
    """Gaussian posteriors over the unconstrained mixture parameters."""

    FIELDS = ("mu", "logvar", "logit")

    def __init__(self, dim: int, seed: int = 0, init_means: np.ndarray | None = None):
        rng = np.random.default_rng(seed)
        if init_means is None:
            init_means = rng.standard_normal((2, dim))
        self.dim = dim
        self.tensors: dict[str, Tensor] = {}
        self._add("mu_loc", np.asarray(init_means, dtype=np.float64).copy())
        self._add("mu_rho", np.full((2, dim), np.log(0.1)))
        self._add("logvar_loc", np.zeros((2, dim)))
        self._add("logvar_rho", np.full((2, dim), np.log(0.1)))
        self._add("logit_loc", np.zeros(2))
        self._add("logit_rho", np.full(2, np.log(0.1)))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = Tensor(value, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    # -- posterior-mean point estimates of the mixture ----------------------

    def mean_mixture(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(means [2,d], variances [2,d], mixing [2]) at the posterior mean."""
        means = self["mu_loc"].data.copy()
        variances = np.exp(self["logvar_loc"].data)
        logits = self["logit_loc"].data
        mixing = np.exp(logits - logits.max())
        mixing = mixing / mixing.sum()
        return means, variances, mixing


def component_log_density(h: np.ndarray, mean: np.ndarray,
                          variance: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density of rows of h under one component."""
    if np.any(variance <= 0):
        raise ContractViolation("component variances must be positive")
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    quad = ((h - mean) ** 2 / variance).sum(axis=1)
    return -0.5 * (quad + np.log(variance).sum() + mean.size * LOG_2PI)


def component_likelihood(h, mean, variance) -> np.ndarray | float:
    """Diagonal-Gaussian density (not log) for one mixture component."""
    out = np.exp(component_log_density(h, np.asarray(mean, dtype=np.float64),
                                       np.asarray(variance, dtype=np.float64)))
    return float(out[0]) if np.asarray(h).ndim == 1 else out


def _kl_standard_normal(loc: Tensor, rho: Tensor) -> Tensor:
    """KL( N(loc, exp(rho)^2) || N(0, 1) ), summed over coordinates."""
    scale = rho.exp()
    return (0.5 * (scale * scale + loc * loc - 1.0) - rho).sum()


def _floored_scale(rho: Tensor) -> Tensor:
    # Underflowing posterior scales are floored to keep the tape finite.
    floored = np.maximum(rho.data, np.log(SCALE_FLOOR))
    if not np.array_equal(floored, rho.data):
        rho.data = floored
    return rho.exp()


def elbo(theta: VariationalPosterior, embeddings: np.ndarray,
         mc_samples: int = 1, seed: int = 0) -> Tensor:
    """Negative evidence lower bound, differentiable in theta.

    KL(q || prior) minus the Monte Carlo expectation of the mixture
    log-likelihood of the embeddings; deterministic given the seed
    (common random numbers across calls with the same seed).
    """
    if mc_samples < 1:
        raise ContractViolation("mc_samples must be >= 1")
    h = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    kl = (_kl_standard_normal(theta["mu_loc"], theta["mu_rho"])
          + _kl_standard_normal(theta["logvar_loc"], theta["logvar_rho"])
          + _kl_standard_normal(theta["logit_loc"], theta["logit_rho"]))
    if h.size == 0:
        return kl
    rng = np.random.default_rng(seed)
    n, d = h.shape
    h_t = Tensor(h)
    total = None
    for _ in range(mc_samples):
        mu = theta["mu_loc"] + _floored_scale(theta["mu_rho"]) * Tensor(
            rng.standard_normal((2, d)))
        logvar = theta["logvar_loc"] + _floored_scale(theta["logvar_rho"]) * Tensor(
            rng.standard_normal((2, d)))
        logit = theta["logit_loc"] + _floored_scale(theta["logit_rho"]) * Tensor(
            rng.standard_normal(2))
        log_mix = logit - logsumexp(logit.reshape(1, 2), axis=1).reshape(1)
        comp_terms = []
        for k in range(2):
            mu_k = mu.take_rows([k]).reshape(d)
            logvar_k = logvar.take_rows([k]).reshape(d)
            inv_var = (-logvar_k).exp()
            diff = h_t - mu_k
            quad = (diff * diff * inv_var).sum(axis=1)
            log_det = logvar_k.sum()
            log_pdf = -0.5 * (quad + log_det + d * LOG_2PI)
            comp_terms.append((log_pdf + log_mix.take_rows([k]).reshape(())).reshape(n, 1))
        log_lik = logsumexp(concat_cols(comp_terms), axis=1).sum()
        total = log_lik if total is None else total + log_lik
    return kl - total * (1.0 / mc_samples)


def concat_cols(tensors) -> Tensor:
    from .autodiff import concat
    return concat(tensors, axis=1)


@dataclass
class FitResult:
    theta: VariationalPosterior
    trajectory: list = field(default_factory=list)
    diverged: bool = False


def fit_mixture(embeddings: np.ndarray, steps: int = 400, lr: float = 0.05,
                mc_samples: int = 2, seed: int = 0) -> FitResult:
    """Fit the variational mixture posterior by Adam on the negative ELBO."""
    h = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if not np.all(np.isfinite(h)):
        raise ContractViolation("embeddings must be finite")
    rng = np.random.default_rng(seed)
    if h.shape[0] >= 2:
        picks = rng.choice(h.shape[0], size=2, replace=False)
        init_means = h[picks]
    else:
        init_means = None
    theta = VariationalPosterior(h.shape[1], seed=seed, init_means=init_means)
    opt = Adam(theta.tensors, lr=lr)
    result = FitResult(theta)
    backup = {k: v.data.copy() for k, v in theta.tensors.items()}
    for step in range(steps):
        loss = elbo(theta, h, mc_samples=mc_samples, seed=int(rng.integers(2 ** 62)))
        if not np.isfinite(loss.data):
            for k, v in theta.tensors.items():
                v.data = backup[k]
            result.diverged = True
            return result
        backup = {k: v.data.copy() for k, v in theta.tensors.items()}
        grads = grad(loss, theta.tensors.values())
        opt.step({k: grads[id(v)] for k, v in theta.tensors.items()})
        result.trajectory.append(float(loss.data))
    return result


@dataclass
class PriorEstimate:
    prior: float
    positive_component: int
    counts: tuple[int, int]


def estimate_prior(theta: VariationalPosterior,
                   positive_embeddings: np.ndarray) -> PriorEstimate:
    """Mixing coefficient of the component that better explains the
    majority of the positive embeddings (posterior-mean point estimate);
    ties go to the first component."""
    pos = np.atleast_2d(np.asarray(positive_embeddings, dtype=np.float64))
    if pos.size == 0:
        raise ContractViolation("positive embeddings must be non-empty")
    means, variances, mixing = theta.mean_mixture()
    log_d1 = component_log_density(pos, means[0], variances[0])
    log_d2 = component_log_density(pos, means[1], variances[1])
    n1 = int((log_d1 > log_d2).sum())
    n2 = pos.shape[0] - n1
    winner = 0 if n1 >= n2 else 1
    return PriorEstimate(float(mixing[winner]), winner, (n1, n2))


def diagnostics_json(result: FitResult, estimate: PriorEstimate) -> str:
    means, variances, mixing = result.theta.mean_mixture()
    return json.dumps({
        "elbo_trajectory": result.trajectory,
        "diverged": result.diverged,
        "posterior_means": means.tolist(),
        "posterior_variances": variances.tolist(),
        "mixing": mixing.tolist(),
        "counts": list(estimate.counts),
        "pi_p": estimate.prior,
    }, sort_keys=True)
