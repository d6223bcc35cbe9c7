"""Monte Carlo batch acquisitions in the minimization orientation.

For a batch ``theta_1..q`` with joint posterior samples ``f``:

* EI  = E[max_j relu(f_best - f_j)]
* PI  = E[max_j 1{f_best - f_j > 0}]
* UCB = E[min_j (mu_j - sqrt(beta pi / 2) |f_j - mu_j|)], an optimistic bound on
  the loss, so larger ``-UCB`` is better. Its single-point value is mu - sqrt(beta) sigma.

Samples use a fixed seed per call. Normals are drawn candidate-major, so
appending a candidate leaves the samples of the earlier ones untouched.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .gp import posterior, posterior_marginals

N_SAMPLES = 256
DEFAULT_BETA = 1.0


def _normals(q, n_samples, seed):
    return np.random.default_rng(seed).standard_normal((q, n_samples)).T


def _batch_cholesky(cov):
    scale = max(float(np.mean(np.diag(cov))), 1e-300)
    for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(cov + jitter * scale * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            continue
    # rank-deficient batch (e.g. repeated candidates): fall back to a symmetric square root
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.maximum(w, 0.0))


def acquisitions(model, candidates, f_best, beta=DEFAULT_BETA, n_samples=N_SAMPLES, seed=0):
    """(ei, pi, ucb) of one batch ``candidates`` (q, d) from joint posterior samples."""
    mu, cov = posterior(model, candidates)
    L = _batch_cholesky(cov)
    eps = _normals(len(mu), n_samples, seed)
    f = mu + eps @ L.T
    return _reduce(f, mu, f_best, beta)


def _reduce(f, mu, f_best, beta):
    gain = f_best - f
    ei = float(np.mean(np.max(np.maximum(gain, 0.0), axis=1)))
    pi = float(np.mean(np.max(gain > 0.0, axis=1)))
    ucb = float(np.mean(np.min(mu - np.sqrt(beta * np.pi / 2) * np.abs(f - mu), axis=1)))
    return ei, pi, ucb


def pointwise_acquisitions(model, points, f_best, beta=DEFAULT_BETA, n_samples=N_SAMPLES, seed=0):
    """Batch-size-one acquisitions for many points at once; returns an (m, 3) array.

    All points share the same standard-normal draws (common random numbers), which
    keeps the estimates smooth across the search space.
    """
    mu, var = posterior_marginals(model, points)
    eps = _normals(1, n_samples, seed)[:, 0]
    f = mu[:, None] + np.sqrt(var)[:, None] * eps[None, :]
    gain = f_best - f
    ei = np.mean(np.maximum(gain, 0.0), axis=1)
    pi = np.mean(gain > 0.0, axis=1)
    ucb = np.mean(mu[:, None] - np.sqrt(beta * np.pi / 2) * np.abs(f - mu[:, None]), axis=1)
    return np.column_stack([ei, pi, ucb])


def expected_improvement_closed_form(mu, sigma, f_best):
    """Single-point analytic EI for minimization."""
    sigma = np.asarray(sigma, dtype=float)
    z = (f_best - mu) / sigma
    return (f_best - mu) * norm.cdf(z) + sigma * norm.pdf(z)
