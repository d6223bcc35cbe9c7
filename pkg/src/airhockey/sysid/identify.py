"""Simulator identification: trace loss, batch proposal and the optimization loop.

The search runs in the unit cube ``u`` that maps affinely onto the parameter
bounds. Each iteration warps the losses, fits the GP (with input warp), runs
NSGA-II on (EI, PI, -UCB) and evaluates five points drawn from the Pareto front.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..path_planner import TableGeometry
from ..puck_dynamics import PuckState, SimParams, _geometry, _advance, simulate_array
from .acquisition import DEFAULT_BETA, N_SAMPLES, pointwise_acquisitions
from .gp import fit_gp
from .nsga2 import nsga2
from .warping import OutputWarp

ANGLE_WEIGHT = 0.2
BATCH_SIZE = 5
POP_SIZE = 100
GENERATIONS = 50
MAX_GP_POINTS = 250

_LO, _HI = SimParams.bounds().T


def to_unit(theta):
    return (np.asarray(theta.as_array() if isinstance(theta, SimParams) else theta) - _LO) / (_HI - _LO)


def from_unit(u):
    return SimParams.from_array(np.clip(_LO + np.clip(u, 0.0, 1.0) * (_HI - _LO), _LO, _HI))


# -- reference traces and loss ------------------------------------------------

@dataclass
class ReferenceTrace:
    """Initial state plus observed positions/orientations at t = dt, 2 dt, ..."""

    initial: PuckState
    r: np.ndarray        # (T, 2)
    phi: np.ndarray      # (T,)
    dt: float = 0.01

    @property
    def T(self):
        return len(self.phi)


def angular_distance(a, b):
    d = np.remainder(np.asarray(a) - np.asarray(b) + np.pi, 2 * np.pi) - np.pi
    return np.abs(d)


def _rollout(initial, params, table, dt, n):
    """(n, 3) array of x, y, phi for steps 1..n; after a goal the last state is held."""
    geom = _geometry(table)
    s = initial.as_tuple()
    out = np.empty((n, 3))
    for k in range(n):
        s, goal = _advance(s, params, geom, (), dt)
        out[k] = s[0], s[1], s[4]
        if goal is not None:
            out[k + 1:] = out[k]
            break
    return out


def trace_loss(trace, params, table=None):
    sim = _rollout(trace.initial, params, TableGeometry() if table is None else table, trace.dt, trace.T)
    dr2 = np.sum((trace.r - sim[:, :2]) ** 2, axis=1)
    return float(np.mean(dr2 + ANGLE_WEIGHT * angular_distance(trace.phi, sim[:, 2]) ** 2))


def loss(theta, reference, table=None):
    """Average over traces of the per-step squared position error plus weighted angle error."""
    if not reference:
        raise ValueError("reference traces must be nonempty")
    params = theta if isinstance(theta, SimParams) else SimParams.from_array(theta)
    return float(np.mean([trace_loss(tr, params, table) for tr in reference]))


def mean_position_error(theta, reference, table=None):
    """Mean Euclidean position error over all steps and traces."""
    table = TableGeometry() if table is None else table
    errs = []
    for tr in reference:
        sim = _rollout(tr.initial, theta, table, tr.dt, tr.T)
        errs.append(np.mean(np.linalg.norm(tr.r - sim[:, :2], axis=1)))
    return float(np.mean(errs))


def make_reference_traces(theta, n, rng, table=None, dt=0.01, T=1.5, sigma_r=0.0, sigma_phi=0.0,
                          speed=(1.0, 3.0), spin=5.0):
    """Traces simulated under ``theta`` with at least one collision and no goal."""
    table = TableGeometry() if table is None else table
    x_lim = table.length / 2 - table.puck_radius - 0.05
    y_lim = table.width / 2 - table.puck_radius - 0.05
    out = []
    while len(out) < n:
        ang = rng.uniform(-np.pi, np.pi)
        sp = rng.uniform(*speed)
        s = PuckState.make(rng.uniform(-x_lim, x_lim), rng.uniform(-y_lim, y_lim), sp * np.cos(ang),
                           sp * np.sin(ang), rng.uniform(-np.pi, np.pi), rng.uniform(-spin, spin))
        events = []
        rows, goal = simulate_array(s, theta, table, dt, T, events=events)
        if goal is not None or not events:
            continue
        r = rows[1:, :2] + rng.normal(0.0, sigma_r, (len(rows) - 1, 2)) if sigma_r else rows[1:, :2].copy()
        phi = rows[1:, 4] + rng.normal(0.0, sigma_phi, len(rows) - 1) if sigma_phi else rows[1:, 4].copy()
        out.append(ReferenceTrace(s, r, np.array([math.remainder(a, 2 * math.pi) for a in phi]), dt))
    return out


def write_reference_dir(path, traces):
    """One CSV per trace; row 0 is the full initial state, later rows carry x, y, phi."""
    os.makedirs(path, exist_ok=True)
    for i, tr in enumerate(traces):
        with open(os.path.join(path, f"trace_{i:03d}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy", "phi", "phidot"])
            w.writerow([f"{0.0:.6f}"] + [f"{v:.12g}" for v in tr.initial.as_tuple()])
            for k in range(tr.T):
                w.writerow([f"{(k + 1) * tr.dt:.6f}", f"{tr.r[k, 0]:.12g}", f"{tr.r[k, 1]:.12g}", "", "",
                            f"{tr.phi[k]:.12g}", ""])


def read_reference_dir(path):
    traces = []
    for name in sorted(os.listdir(path)):
        if not name.endswith(".csv"):
            continue
        with open(os.path.join(path, name)) as fh:
            rows = list(csv.reader(fh))[1:]
        t0 = [float(v) for v in rows[0]]
        initial = PuckState.make(*t0[1:7])
        data = np.array([[float(r[0]), float(r[1]), float(r[2]), float(r[5])] for r in rows[1:]])
        dt = float(data[0, 0] - t0[0])
        traces.append(ReferenceTrace(initial, data[:, 1:3], data[:, 3], dt))
    return traces


# -- optimization loop --------------------------------------------------------

@dataclass
class BoState:
    U: np.ndarray = field(default_factory=lambda: np.empty((0, 7)))
    y: np.ndarray = field(default_factory=lambda: np.empty(0))
    beta: float = DEFAULT_BETA
    batch_size: int = BATCH_SIZE
    iteration: int = 0
    model: object = None
    output_warp: OutputWarp = None
    gp_params: np.ndarray = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")

    @property
    def best(self):
        i = int(np.argmin(self.y))
        return from_unit(self.U[i]), float(self.y[i])

    def add(self, U, y):
        self.U = np.vstack([self.U, U])
        self.y = np.concatenate([self.y, y])


@dataclass
class Proposal:
    U: np.ndarray
    padded: np.ndarray           # True where the point is random padding, not front membership
    front: np.ndarray
    front_values: np.ndarray

    @property
    def params(self):
        return [from_unit(u) for u in self.U]


def gp_subset(y, cap=MAX_GP_POINTS):
    """Indices of at most ``cap`` points: the best half plus an even spread over the rest by loss.

    Keeping only the lowest losses hides every bad region from the GP, which then
    reverts to a good mean there and keeps proposing it.
    """
    order = np.argsort(y, kind="stable")
    if len(y) <= cap:
        return order
    n_best = cap // 2
    rest = order[n_best:]
    spread = rest[np.round(np.linspace(len(rest) - 1, 0, cap - n_best)).astype(int)]
    return np.r_[order[:n_best], spread]


def fit_state_model(state, rng):
    """Warp outputs and fit the GP on at most MAX_GP_POINTS points (see ``gp_subset``)."""
    U, y = state.U, state.y
    if len(y) > MAX_GP_POINTS:
        keep = gp_subset(y)
        U, y = U[keep], y[keep]
    state.output_warp = OutputWarp.fit(y)
    yw = state.output_warp.warp(y)
    warm = state.gp_params is not None
    starts = [state.gp_params] if warm else None
    state.model = fit_gp(U, yw, n_restarts=0 if warm else 2, rng=rng, warp_inputs=True, starts=starts,
                         maxiter=60)
    state.gp_params = state.model.params
    return state.model


def pareto_front(model, f_best, rng, beta=DEFAULT_BETA, dim=None, seeds=None,
                 pop_size=POP_SIZE, generations=GENERATIONS, seed=0):
    """Pareto set of (EI, PI, -UCB) over the unit cube found by NSGA-II."""
    dim = model.X.shape[1] if dim is None else dim

    def objective(X):
        a = pointwise_acquisitions(model, X, f_best, beta, N_SAMPLES, seed)
        a[:, 2] = -a[:, 2]
        return a

    return nsga2(objective, dim, rng, pop_size, generations, seeds)


def propose_batch(state, rng):
    """Five (batch_size) points sampled without replacement from the acquisition Pareto front."""
    model = state.model
    f_best = float(np.min(model.y))
    seeds = model.X[np.argsort(model.y)[:5]]
    front, values = pareto_front(model, f_best, rng, state.beta, seeds=seeds,
                                 seed=int(rng.integers(2 ** 31)))
    q = state.batch_size
    if len(front) >= q:
        pick = rng.choice(len(front), size=q, replace=False)
        U, padded = front[pick], np.zeros(q, dtype=bool)
    else:
        U = np.vstack([front, rng.uniform(size=(q - len(front), front.shape[1]))])
        padded = np.r_[np.zeros(len(front), dtype=bool), np.ones(q - len(front), dtype=bool)]
    return Proposal(U, padded, front, values)


@dataclass
class IdentifyResult:
    theta_best: SimParams
    loss_best: float
    history: np.ndarray          # best-so-far loss after each iteration
    U: np.ndarray
    y: np.ndarray
    front_sizes: np.ndarray = None


def identify(reference, budget, rng, batch_size=BATCH_SIZE, beta=DEFAULT_BETA, table=None, map_fn=map):
    """Bayesian optimization of the simulator parameters against ``reference`` traces.

    The first iteration evaluates a uniform random batch; every later one fits the
    surrogate and proposes from the Pareto front. ``map_fn`` may parallelize a batch.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    state = BoState(beta=beta, batch_size=batch_size)
    history = []
    front_sizes = []
    for it in range(budget):
        if it == 0 or len(state.y) < 2:
            U = rng.uniform(size=(batch_size, 7))
        else:
            fit_state_model(state, rng)
            prop = propose_batch(state, rng)
            U = prop.U
            front_sizes.append(len(prop.front))
        y = np.fromiter(map_fn(lambda u: loss(from_unit(u), reference, table), U), float, len(U))
        state.add(U, y)
        state.iteration = it + 1
        history.append(float(np.min(state.y)))
    theta, best = state.best
    return IdentifyResult(theta, best, np.array(history), state.U, state.y, np.array(front_sizes))


def random_search(reference, n_evals, rng, table=None, batch_size=BATCH_SIZE):
    """Uniform random baseline; history is best-so-far per batch of ``batch_size`` draws."""
    U = rng.uniform(size=(n_evals, 7))
    y = np.array([loss(from_unit(u), reference, table) for u in U])
    best = np.minimum.accumulate(y)
    history = best[batch_size - 1::batch_size]
    i = int(np.argmin(y))
    return IdentifyResult(from_unit(U[i]), float(y[i]), history, U, y)
