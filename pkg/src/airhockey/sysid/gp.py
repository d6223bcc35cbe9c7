"""Gaussian-process surrogate: Matern-5/2 ARD kernel, constant mean, Gaussian noise.

Hyper-parameters are fitted by minimizing the negative log marginal likelihood
with analytic gradients. The optional Kumaraswamy input warp is fitted jointly,
its gradient obtained by the chain rule through the kernel's input derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from ..errors import IllConditioned
from .warping import SHAPE_BOUNDS, InputWarp

SQRT5 = np.sqrt(5.0)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
NOISE_FLOOR = 1e-8
LENGTHSCALE_BOUNDS = (1e-2, 20.0)
SIGNAL_BOUNDS = (1e-2, 1e2)      # relative to the output variance
NOISE_BOUNDS = (NOISE_FLOOR, 1.0)  # relative to the output variance


def matern52(X1, X2, lengthscales, signal_var):
    r = _scaled_distance(X1, X2, lengthscales)
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r ** 2) * np.exp(-SQRT5 * r)


def _scaled_distance(X1, X2, lengthscales):
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = np.sum(A ** 2, 1)[:, None] + np.sum(B ** 2, 1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(d2, 0.0))


def _cholesky(K):
    """Cholesky factor with an escalating diagonal jitter. Returns (L, jitter)."""
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(K + jitter * scale * np.eye(len(K))), jitter * scale
        except np.linalg.LinAlgError:
            continue
    raise IllConditioned("kernel matrix is not positive definite at any jitter level up to 1e-4")


@dataclass
class GpModel:
    """Fitted GP. ``X`` holds raw unit-cube inputs; the warp is applied internally."""

    X: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise: float
    mean: float = 0.0
    warp: InputWarp = None
    nll: float = np.nan
    params: np.ndarray = None
    _L: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)
    _Kinv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.lengthscales = np.asarray(self.lengthscales, dtype=float)
        if self.warp is None:
            self.warp = InputWarp.identity(self.X.shape[1])
        if np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be positive")
        if self.noise < 0:
            raise ValueError("noise variance must be non-negative")
        # zero noise interpolates exactly; the jitter ladder only kicks in if K is singular
        self.noise = float(self.noise)
        K = matern52(self.Xw, self.Xw, self.lengthscales, self.signal_var)
        self._L, _ = _cholesky(K + self.noise * np.eye(len(K)))
        self._alpha = cho_solve((self._L, True), self.y - self.mean)

    @property
    def Xw(self):
        return self.X if self.warp.is_identity() else self.warp.warp(self.X)

    @property
    def Kinv(self):
        if self._Kinv is None:
            self._Kinv = cho_solve((self._L, True), np.eye(len(self.y)))
        return self._Kinv

    def cross_kernel(self, Q):
        Qw = np.atleast_2d(Q) if self.warp.is_identity() else self.warp.warp(np.atleast_2d(Q))
        return matern52(Qw, self.Xw, self.lengthscales, self.signal_var)


def posterior(model, queries):
    """Joint posterior mean vector and covariance matrix at ``queries`` (q, d)."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    Ks = model.cross_kernel(Q)
    mu = model.mean + Ks @ model._alpha
    V = solve_triangular(model._L, Ks.T, lower=True)
    Qw = Q if model.warp.is_identity() else model.warp.warp(Q)
    cov = matern52(Qw, Qw, model.lengthscales, model.signal_var) - V.T @ V
    return mu, 0.5 * (cov + cov.T)


def posterior_marginals(model, queries):
    """Posterior mean and variance per query point, without the joint covariance."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    Ks = model.cross_kernel(Q)
    mu = model.mean + Ks @ model._alpha
    var = model.signal_var - np.sum((Ks @ model.Kinv) * Ks, axis=1)
    return mu, np.maximum(var, 0.0)


# -- hyper-parameter fitting --------------------------------------------------

def _unpack(p, dim, warp_inputs):
    log_ell = p[:dim]
    log_sf, log_noise = p[dim], p[dim + 1]
    if warp_inputs:
        return log_ell, log_sf, log_noise, p[dim + 2:2 * dim + 2], p[2 * dim + 2:3 * dim + 2]
    return log_ell, log_sf, log_noise, None, None


def negative_log_likelihood(p, X, y, mean, warp_inputs=False, grad=True):
    """Standard GP NLL, 0.5 log det(K + s I) + 0.5 r^T (K + s I)^-1 r + n/2 log 2 pi.

    ``p`` packs log lengthscales, log signal variance, log noise variance and,
    with ``warp_inputs``, the log Kumaraswamy shapes (all a's then all b's).
    """
    n, dim = X.shape
    log_ell, log_sf, log_noise, log_a, log_b = _unpack(p, dim, warp_inputs)
    ell, sf, noise = np.exp(log_ell), np.exp(log_sf), np.exp(log_noise)
    if warp_inputs:
        warp = InputWarp(np.exp(log_a), np.exp(log_b))
        Xw = warp.warp(X)
    else:
        Xw = X
    Z = Xw / ell
    r = _scaled_distance(Xw, Xw, ell)
    e = np.exp(-SQRT5 * r)
    K = sf * (1.0 + SQRT5 * r + 5.0 / 3.0 * r ** 2) * e
    try:
        L = np.linalg.cholesky(K + noise * np.eye(n))
    except np.linalg.LinAlgError:
        return (np.inf, np.zeros_like(p)) if grad else np.inf
    resid = y - mean
    alpha = cho_solve((L, True), resid)
    nll = np.sum(np.log(np.diag(L))) + 0.5 * resid @ alpha + 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return nll
    W = cho_solve((L, True), np.eye(n)) - np.outer(alpha, alpha)
    E = 5.0 / 3.0 * sf * (1.0 + SQRT5 * r) * e       # -(dk/dr) / r
    M = W * E
    rs = M.sum(1)
    g = np.empty_like(p)
    # d K / d log ell_d = E * (z_i - z_j)^2
    g[:dim] = 0.5 * (2.0 * rs @ Z ** 2 - 2.0 * np.sum(Z * (M @ Z), axis=0))
    g[dim] = 0.5 * np.sum(W * K)
    g[dim + 1] = 0.5 * noise * np.trace(W)
    if warp_inputs:
        # d nll / d x_id = -sum_j M_ij (x_id - x_jd) / ell_d^2
        G = -(Xw * rs[:, None] - M @ Xw) / ell ** 2
        d_a, d_b = warp.shape_gradients(X)
        g[dim + 2:2 * dim + 2] = np.sum(G * d_a, axis=0)
        g[2 * dim + 2:] = np.sum(G * d_b, axis=0)
    return nll, g


def _bounds(dim, y_var, warp_inputs):
    b = [tuple(np.log(LENGTHSCALE_BOUNDS))] * dim
    b.append(tuple(np.log(np.array(SIGNAL_BOUNDS) * y_var)))
    b.append(tuple(np.log(np.array(NOISE_BOUNDS) * y_var)))
    if warp_inputs:
        b += [tuple(np.log(SHAPE_BOUNDS))] * (2 * dim)
    return b


def _default_start(dim, y_var, warp_inputs):
    p = np.r_[np.full(dim, np.log(0.5)), np.log(y_var), np.log(1e-3 * y_var)]
    return np.r_[p, np.zeros(2 * dim)] if warp_inputs else p


def _random_start(rng, bounds):
    lo, hi = np.array(bounds).T
    return rng.uniform(lo, hi)


def fit_gp(X, y, n_restarts=3, rng=None, warp_inputs=False, starts=None, maxiter=200):
    """Fit hyper-parameters by multi-start L-BFGS-B on the NLL.

    ``starts`` adds explicit initial vectors (for warm starts) to the default and
    ``n_restarts`` random ones. The returned model's NLL is no larger than the
    NLL at any of the starting points.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("need at least two observations")
    rng = np.random.default_rng() if rng is None else rng
    n, dim = X.shape
    mean = float(np.mean(y))
    y_var = float(np.var(y)) if np.var(y) > 0 else 1.0
    bounds = _bounds(dim, y_var, warp_inputs)
    lo, hi = np.array(bounds).T
    inits = [_default_start(dim, y_var, warp_inputs)]
    inits += [np.clip(np.asarray(s, dtype=float), lo, hi) for s in (starts or [])]
    inits += [_random_start(rng, bounds) for _ in range(n_restarts)]
    best_p, best_f = None, np.inf
    for p0 in inits:
        f0 = negative_log_likelihood(p0, X, y, mean, warp_inputs, grad=False)
        if f0 < best_f:
            best_p, best_f = p0, f0
        res = minimize(negative_log_likelihood, p0, args=(X, y, mean, warp_inputs), jac=True,
                       method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if np.isfinite(res.fun) and res.fun < best_f:
            best_p, best_f = res.x, float(res.fun)
    if best_p is None:
        raise IllConditioned("NLL is not finite at any starting point")
    log_ell, log_sf, log_noise, log_a, log_b = _unpack(best_p, dim, warp_inputs)
    warp = InputWarp(np.exp(log_a), np.exp(log_b)) if warp_inputs else InputWarp.identity(dim)
    model = GpModel(X, y, np.exp(log_ell), float(np.exp(log_sf)), float(np.exp(log_noise)), mean, warp,
                    nll=float(best_f), params=best_p)
    return model
