"""Joint-space realisation of a planned hit.

Each tracking step solves a small QP over the null-space coordinates of the
position Jacobian so the commanded Cartesian velocity is met exactly while joint
velocities stay inside their limits. The anchored variant pulls the redundancy
towards a precomputed hitting configuration. The hitting configuration itself
maximises directional manipulability at the hit point. The hit speed comes
from either a least-squares ratio test or an LP over the velocity null space.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, minimize

from . import path_planner as pp
from .errors import Infeasible, SingularConfiguration, Unreachable
from .kinematics import directional_jacobian_gradient, fk_and_jacobian, fk_position, \
    null_space_basis, pinv_and_null, position_jacobian, pseudoinverse
from .qp import solve_box_qp

MODES = ("QP", "NL+AQP", "LP+NL+AQP")
QP_INITIAL_SPEED = 2.0
SCALE_DOWN = 0.9
MAX_TRIALS = 10


@dataclass
class TrackerConfig:
    """Weights and timing of the null-space tracker.

    ``W`` holds the diagonal of the weight matrix (shoulder and elbow weighted higher).
    """

    W: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 5.0, 5.0, 1.0, 1.0, 1.0]))
    dt: float = 0.01
    anchor_scale: float = 0.2
    q_anchor: np.ndarray = None
    enforce_position_limits: bool = True

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.shape != (7,) or np.any(self.W <= 0):
            raise ValueError("W must hold 7 positive diagonal weights")
        if self.dt <= 0 or self.anchor_scale <= 0:
            raise ValueError("dt and anchor_scale must be positive")


@dataclass
class JointTrajectory:
    """Samples ``(t, q, qdot)`` with ``q[k+1] = q[k] + qdot[k+1] * dt``."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    feasible: bool
    achieved_hit_speed: float
    hit_index: int = -1   # sample whose qdot realises the hit velocity
    trials: int = 0
    hit_config: np.ndarray = None
    # commanded Cartesian targets per step: x_des, v_des used to compute qdot[k+1]
    x_des: np.ndarray = None
    v_des: np.ndarray = None

    def __len__(self):
        return len(self.t)

    def hit_velocity(self, chain):
        """Cartesian velocity commanded at the hit sample, ``J(q_k) qdot_{k+1}``."""
        if not self.feasible:
            return np.zeros(3)
        return position_jacobian(chain, self.q[self.hit_index - 1]) @ self.qdot[self.hit_index]


def joint_velocity_box(chain, q, cfg):
    lo = -chain.qdot_max.copy()
    hi = chain.qdot_max.copy()
    if cfg.enforce_position_limits:
        lo = np.maximum(lo, (chain.q_min - q) / cfg.dt)
        hi = np.minimum(hi, (chain.q_max - q) / cfg.dt)
    return lo, hi


def _null_space_qp(chain, q, x_des, v_des, cfg, qdot_ref, feedback):
    x, J = fk_and_jacobian(chain, q)
    J_pinv, E = pinv_and_null(J)
    task = (x_des - x) / cfg.dt + v_des if feedback else v_des
    b = J_pinv @ task
    W = cfg.W
    H = E.T @ (W[:, None] * E)
    g = E.T @ (W * (b - qdot_ref))
    lo, hi = joint_velocity_box(chain, q, cfg)
    res = solve_box_qp(H, g, E, lo - b, hi - b)
    alpha = res.x
    qdot = np.clip(b + E @ alpha, lo, hi)
    return alpha, q + qdot * cfg.dt, qdot


def qp_step(chain, q, x_des, v_des, cfg, feedback=True):
    """Weighted null-space step: minimise ``0.5 |b + E a|_W^2`` inside the velocity box.

    ``b = J^+ ((x_des - x) / dt + v_des)``; with ``feedback=False`` the position
    correction is dropped and ``b = J^+ v_des``.

    Raises:
        Infeasible: no null-space velocity keeps every joint inside its limits.
        SingularConfiguration: the position Jacobian lost rank.
    """
    return _null_space_qp(chain, q, x_des, v_des, cfg, np.zeros(chain.n_joints), feedback)


def aqp_step(chain, q, x_des, v_des, z, cfg, feedback=True):
    """Anchored step: track the reference velocity ``z (q_a - q) / c`` in the null space."""
    if cfg.q_anchor is None:
        raise ValueError("anchored step needs cfg.q_anchor")
    qdot_ref = z * (cfg.q_anchor - q) / cfg.anchor_scale
    return _null_space_qp(chain, q, x_des, v_des, cfg, qdot_ref, feedback)


# -- hitting configuration ----------------------------------------------------

def damped_ik(chain, p, q0, damping=1e-2, tol=1e-10, max_iter=200):
    """Damped least-squares position IK, clipped to joint limits. Returns q or None."""
    q = np.clip(np.asarray(q0, dtype=float), chain.q_min, chain.q_max)
    lam2 = damping ** 2
    for _ in range(max_iter):
        x, J = fk_and_jacobian(chain, q)
        err = p - x
        if err @ err < tol * tol:
            return q
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(3), err)
        step = np.linalg.norm(dq)
        if step > 0.5:
            dq *= 0.5 / step
        q = np.clip(q + dq, chain.q_min, chain.q_max)
    return None


def directional_manipulability(chain, q, v):
    return float(np.linalg.norm(v @ position_jacobian(chain, q)))


def _project_to_position(chain, q, p, tol=1e-10, max_iter=20):
    """Newton projection onto ``FK_p(q) = p`` with minimum-norm corrections."""
    for _ in range(max_iter):
        x, J = fk_and_jacobian(chain, q)
        err = p - x
        if np.linalg.norm(err) < tol:
            break
        q = np.clip(q + pseudoinverse(J) @ err, chain.q_min, chain.q_max)
    return q


def _al_maximize(chain, p, v, q0, rho=1e2, outer=10, tol=1e-7):
    """Augmented Lagrangian on ``FK_p(q) = p`` with L-BFGS-B inner solves (bounds = joint limits)."""
    bounds = list(zip(chain.q_min, chain.q_max))
    # least-squares multiplier estimate at the seed: grad f = J^T lam
    _, J, vJ, G = directional_jacobian_gradient(chain, q0, v)
    lam = pseudoinverse(J).T @ (2.0 * G.T @ vJ)
    q = q0.copy()
    prev = np.inf

    def fun(qq):
        x, J, vJ, G = directional_jacobian_gradient(chain, qq, v)
        c = x - p
        val = -(vJ @ vJ) + lam @ c + 0.5 * rho * (c @ c)
        grad = -2.0 * G.T @ vJ + J.T @ (lam + rho * c)
        return val, grad

    for _ in range(outer):
        res = minimize(fun, q, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 200, "ftol": 1e-12, "gtol": 1e-7})
        q = res.x
        c = fk_position(chain, q) - p
        cn = float(np.linalg.norm(c))
        if cn < tol:
            break
        lam = lam + rho * c
        if cn > 0.25 * prev:
            rho *= 10.0
        prev = cn
    return q


def optimize_hit_config(chain, p, v, q_init, n_restarts=8, rng=None, constraint_tol=1e-6, tie_tol=1e-6,
                        limit_margin=0.0):
    """Joint configuration at ``p`` maximising ``|v^T J_p(q)|`` within joint limits.

    Seeds are damped least-squares IK solutions, starting from ``q_init`` and then
    random joint vectors. Each seed is refined by the augmented-Lagrangian solver.
    Optima within ``tie_tol`` of the best value are broken by distance to ``q_init``; the
    tolerance sits above the solver precision so symmetric branches count as ties.
    ``limit_margin`` (rad) keeps the search away from the joint limits so the
    tracker has room to move around the hitting configuration.

    Raises:
        Unreachable: no IK seed reaches ``p``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    full_chain = chain
    if limit_margin > 0:
        chain = replace(chain, q_min=chain.q_min + limit_margin, q_max=chain.q_max - limit_margin)
    seeds = []
    q0 = damped_ik(chain, p, q_init)
    if q0 is not None:
        seeds.append(q0)
    attempts = 0
    while len(seeds) < n_restarts and attempts < 5 * n_restarts:
        attempts += 1
        q_rand = rng.uniform(chain.q_min, chain.q_max)
        q_ik = damped_ik(chain, p, q_rand)
        if q_ik is not None:
            seeds.append(q_ik)
    if not seeds:
        raise Unreachable(f"no IK solution found for {p}")

    q_init = np.asarray(q_init, dtype=float)
    candidates = []
    if (full_chain.within_limits(q_init)
            and np.linalg.norm(fk_position(chain, q_init) - p) < constraint_tol):
        candidates.append(q_init.copy())
    for seed in seeds:
        candidates.append(seed)
        try:
            q = _project_to_position(chain, _al_maximize(chain, p, v, seed), p)
        except SingularConfiguration:
            continue
        if chain.within_limits(q) and np.linalg.norm(fk_position(chain, q) - p) < constraint_tol:
            candidates.append(q)
    values = np.array([directional_manipulability(chain, q, v) for q in candidates])
    # symmetric arm branches reach the same optimum; prefer the one nearest q_init
    near_best = np.flatnonzero(values >= values.max() - tie_tol)
    dist = [np.linalg.norm(candidates[i] - q_init) for i in near_best]
    return candidates[near_best[int(np.argmin(dist))]]


# -- maximum hitting velocity -------------------------------------------------

def max_velocity_ls(chain, q, v):
    """Largest ``eta`` with ``eta * J^+ v`` inside the joint-velocity box."""
    qdot_unit = pseudoinverse(position_jacobian(chain, q)) @ np.asarray(v, dtype=float)
    mag = np.abs(qdot_unit)
    moving = mag > 1e-12
    eta = float(np.min(chain.qdot_max[moving] / mag[moving]))
    qdot = eta * qdot_unit
    return eta, np.clip(qdot, -chain.qdot_max, chain.qdot_max)


def orthogonal_complement(v):
    """Two orthonormal 3-vectors spanning the plane orthogonal to unit ``v``."""
    v = np.asarray(v, dtype=float)
    basis = np.linalg.svd(v[None, :])[2]
    return basis[1:].T


def max_velocity_lp(chain, q, v, complement=None):
    """Maximum Cartesian speed exactly along ``v`` reachable inside the velocity box.

    Solves ``max v^T J E a  s.t. -qdot_max <= E a <= qdot_max`` where ``E`` spans the
    null space of ``(v_perp)^T J``.
    """
    v = np.asarray(v, dtype=float)
    J = position_jacobian(chain, q)
    v_perp = orthogonal_complement(v) if complement is None else complement
    E = null_space_basis(v_perp.T @ J)
    cost = -(v @ J @ E)
    A = np.vstack([E, -E])
    ub = np.concatenate([chain.qdot_max, chain.qdot_max])
    res = linprog(cost, A_ub=A, b_ub=ub, bounds=[(None, None)] * E.shape[1], method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status != 3, "velocity LP cannot be unbounded inside the joint box"
    if res.status != 0:
        return max_velocity_ls(chain, q, v)
    qdot = E @ res.x
    # strip solver tolerance: scale (not clip) so the direction stays exact
    over = np.max(np.abs(qdot) / chain.qdot_max)
    if over > 1.0:
        qdot = qdot / over
    speed = float(v @ J @ qdot)
    eta, qdot_ls = max_velocity_ls(chain, q, v)
    if speed < eta:
        return eta, qdot_ls
    return speed, qdot


# -- full pipeline ------------------------------------------------------------

def phase_variable(tau, t_hit, duration):
    """1 at both ends of the motion, 0 at the hit instant, linear in between."""
    if tau <= t_hit:
        return 1.0 - tau / t_hit if t_hit > 0 else 0.0
    span = duration - t_hit
    return min((tau - t_hit) / span, 1.0) if span > 0 else 1.0


def track_plan(chain, start_q, plan, cfg, height=0.0, anchored=False):
    """Follow a Cartesian hit plan. Raises Infeasible/SingularConfiguration on failure."""
    dt = cfg.dt
    t_hit = plan.hit_time
    duration = plan.duration
    n_hit = int(math.ceil(t_hit / dt - 1e-9))
    n_total = n_hit + int(math.ceil((duration - t_hit) / dt - 1e-9))
    q = np.asarray(start_q, dtype=float).copy()
    qs = [q.copy()]
    qdots = [np.zeros(chain.n_joints)]
    xs, vs = [], []
    for k in range(n_total):
        # plan time aligned so that sample n_hit is the hit instant
        tau = min(max(t_hit + (k - n_hit) * dt, 0.0), duration)
        pos, vel = pp.eval_plan(plan, tau)
        x_des = np.array([pos[0], pos[1], height])
        v_des = np.array([vel[0], vel[1], 0.0])
        # the hit step commands the exact hitting velocity; the position error is
        # corrected on the following step
        feedback = k != n_hit
        if anchored:
            z = phase_variable(tau, t_hit, duration)
            _, q, qdot = aqp_step(chain, q, x_des, v_des, z, cfg, feedback)
        else:
            _, q, qdot = qp_step(chain, q, x_des, v_des, cfg, feedback)
        qs.append(q.copy())
        qdots.append(qdot)
        xs.append(x_des)
        vs.append(v_des)
    t = dt * np.arange(n_total + 1)
    return t, np.array(qs), np.array(qdots), np.array(xs), np.array(vs), n_hit


def hit_point_for_puck(puck, hit_dir, table):
    """Mallet centre at contact when striking the puck along ``hit_dir``."""
    return np.asarray(puck, dtype=float) - (table.puck_radius + table.mallet_radius) * np.asarray(hit_dir)


def plan_hit_trajectory(chain, start_q, puck, hit_dir, stop, table, cfg, mode, bounds=None,
                        height=0.0, rng=None, motion_pad=0.2):
    """Plan, optimise and track a hit with the retry policy (scale by 0.9, up to 10 trials).

    Returns a ``JointTrajectory``; exhausting all trials yields ``feasible=False`` and
    ``achieved_hit_speed=0``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    hit_dir = np.asarray(hit_dir, dtype=float)
    start_xy = fk_position(chain, start_q)[:2]
    hit_xy = hit_point_for_puck(puck, hit_dir, table)
    if bounds is None:
        bounds = pp.motion_bounds(table, [start_xy, hit_xy, stop], motion_pad)
    v3 = np.array([hit_dir[0], hit_dir[1], 0.0])
    p3 = np.array([hit_xy[0], hit_xy[1], height])

    q_star = None
    if mode == "QP":
        v_hit = QP_INITIAL_SPEED
    else:
        q_star = optimize_hit_config(chain, p3, v3, start_q, rng=rng)
        if mode == "LP+NL+AQP":
            v_hit, _ = max_velocity_lp(chain, q_star, v3)
        else:
            v_hit, _ = max_velocity_ls(chain, q_star, v3)
    run_cfg = TrackerConfig(cfg.W, cfg.dt, cfg.anchor_scale, q_star, cfg.enforce_position_limits)

    for trial in range(1, MAX_TRIALS + 1):
        try:
            plan = pp.plan_hit_path(start_xy, hit_xy, hit_dir, stop, bounds, v_hit)
            t, qs, qdots, xs, vs, n_hit = track_plan(chain, start_q, plan, run_cfg, height,
                                                     anchored=q_star is not None)
        except (Infeasible, SingularConfiguration):
            v_hit *= SCALE_DOWN
            continue
        traj = JointTrajectory(t, qs, qdots, True, float(v_hit), n_hit + 1, trial, q_star, xs, vs)
        return traj
    empty = np.asarray(start_q, dtype=float)[None, :]
    return JointTrajectory(np.zeros(1), empty, np.zeros_like(empty), False, 0.0, -1, MAX_TRIALS, q_star)


def timed_plan_hit_trajectory(*args, **kwargs):
    t0 = time.perf_counter()
    traj = plan_hit_trajectory(*args, **kwargs)
    return traj, 1000.0 * (time.perf_counter() - t0)


def write_trajectory_csv(path, traj):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"q{i}" for i in range(1, 8)] + [f"qd{i}" for i in range(1, 8)])
        for t, q, qd in zip(traj.t, traj.q, traj.qdot):
            writer.writerow([f"{t:.6f}"] + [f"{x:.12g}" for x in q] + [f"{x:.12g}" for x in qd])
