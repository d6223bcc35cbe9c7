"""Small NSGA-II for box-bounded multi-objective maximization on the unit cube."""
from __future__ import annotations

import numpy as np


def dominates(a, b):
    """True if ``a`` Pareto-dominates ``b`` (maximization)."""
    return bool(np.all(a >= b) and np.any(a > b))


def non_dominated_sort(F):
    """Front index (0 = non-dominated) for each row of the objective matrix F."""
    n = len(F)
    ge = np.all(F[:, None, :] >= F[None, :, :], axis=2)
    gt = np.any(F[:, None, :] > F[None, :, :], axis=2)
    dom = ge & gt                      # dom[i, j]: i dominates j
    count = dom.sum(0)
    rank = np.full(n, -1)
    front = np.flatnonzero(count == 0)
    level = 0
    while front.size:
        rank[front] = level
        count = count - dom[front].sum(0)
        count[rank >= 0] = -1
        front = np.flatnonzero(count == 0)
        level += 1
    return rank


def crowding_distance(F):
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        span = F[order[-1], k] - F[order[0], k]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (F[order[2:], k] - F[order[:-2], k]) / span
    return dist


def _select_survivors(F, size):
    rank = non_dominated_sort(F)
    keep = []
    for level in range(rank.max() + 1):
        idx = np.flatnonzero(rank == level)
        if len(keep) + len(idx) <= size:
            keep.extend(idx)
            continue
        cd = crowding_distance(F[idx])
        keep.extend(idx[np.argsort(-cd, kind="stable")[:size - len(keep)]])
        break
    keep = np.array(keep)
    return keep, rank[keep], crowding_distance_by_front(F[keep], rank[keep])


def crowding_distance_by_front(F, rank):
    cd = np.zeros(len(F))
    for level in np.unique(rank):
        idx = np.flatnonzero(rank == level)
        cd[idx] = crowding_distance(F[idx])
    return cd


def _tournament(rng, rank, cd, n):
    a = rng.integers(len(rank), size=n)
    b = rng.integers(len(rank), size=n)
    better = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (cd[a] > cd[b]))
    return np.where(better, a, b)


def _sbx(rng, p1, p2, eta=15.0, prob=0.9):
    u = rng.uniform(size=p1.shape)
    beta = np.where(u <= 0.5, (2 * u) ** (1 / (eta + 1)), (1 / (2 * (1 - u))) ** (1 / (eta + 1)))
    mate = rng.uniform(size=(len(p1), 1)) < prob
    swap = rng.uniform(size=p1.shape) < 0.5
    beta = np.where(mate & swap, beta, 1.0)
    c1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
    c2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
    return np.clip(c1, 0, 1), np.clip(c2, 0, 1)


def _mutate(rng, X, eta=20.0):
    prob = 1.0 / X.shape[1]
    u = rng.uniform(size=X.shape)
    delta = np.where(u < 0.5, (2 * u) ** (1 / (eta + 1)) - 1, 1 - (2 * (1 - u)) ** (1 / (eta + 1)))
    hit = rng.uniform(size=X.shape) < prob
    return np.clip(X + np.where(hit, delta, 0.0), 0, 1)


def nsga2(objective, dim, rng, pop_size=100, generations=50, seeds=None):
    """Maximize the vector ``objective(X) -> (n, m)`` over [0, 1]^dim.

    ``seeds`` (k, dim) are injected into the initial population. Returns
    (front points, front objective values) from the final population.
    """
    X = rng.uniform(size=(pop_size, dim))
    if seeds is not None and len(seeds):
        seeds = np.clip(np.atleast_2d(seeds), 0, 1)[:pop_size]
        X[:len(seeds)] = seeds
    F = objective(X)
    keep, rank, cd = _select_survivors(F, pop_size)
    X, F = X[keep], F[keep]
    for _ in range(generations):
        half = (pop_size + 1) // 2
        i1, i2 = _tournament(rng, rank, cd, half), _tournament(rng, rank, cd, half)
        c1, c2 = _sbx(rng, X[i1], X[i2])
        kids = _mutate(rng, np.vstack([c1, c2])[:pop_size])
        allX = np.vstack([X, kids])
        allF = np.vstack([F, objective(kids)])
        keep, rank, cd = _select_survivors(allF, pop_size)
        X, F = allX[keep], allF[keep]
    front = rank == 0
    Xf, Ff = X[front], F[front]
    _, uniq = np.unique(np.round(Xf, 12), axis=0, return_index=True)
    uniq = np.sort(uniq)
    return Xf[uniq], Ff[uniq]
